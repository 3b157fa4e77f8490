"""Train a bilinear scoring head on frozen embeddings with a hinge
constraint that penalizes ranking a generated document above its paired
human counterpart.

The head scores s(q, d) = (A·emb(q))·(A·emb(d))/τ with a learned shared
projection A.  The training loss is

    L = L_rank + α·L_debias

where L_rank is InfoNCE over in-batch negatives (both the human and the
generated document of a triplet serve as positives) and L_debias is
Σ_m max{0, s(q_m, d^G_m) − s(q_m, d^H_m)}.  Training is plain first-order
descent with a fixed step, fully determined by the seed.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from sourcebias.evaluation import BiasReport, evaluate_runs, masked_metric
from sourcebias.store import (
    EmbeddingSet,
    FormatError,
    Query,
    QrelSet,
    RunList,
    Source,
    fmt17,
)


@dataclass(frozen=True)
class Triplet:
    query_id: str
    human_doc_id: str
    generated_doc_id: str


class TripletSet:
    """Training triplets plus the embedding set backing all their ids."""

    def __init__(self, triplets: Sequence[Triplet], embeddings: EmbeddingSet):
        seen: set[tuple[str, str, str]] = set()
        for t in triplets:
            key = (t.query_id, t.human_doc_id, t.generated_doc_id)
            if key in seen:
                raise ValueError(f"duplicate triplet {key!r}")
            seen.add(key)
            for needed in key:
                if needed not in embeddings:
                    raise ValueError(f"triplet id {needed!r} has no embedding")
        self.triplets = tuple(triplets)
        self.embeddings = embeddings

    def __len__(self) -> int:
        return len(self.triplets)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(queries, human docs, generated docs), one row per triplet."""
        emb = self.embeddings
        q = emb.matrix([t.query_id for t in self.triplets])
        h = emb.matrix([t.human_doc_id for t in self.triplets])
        g = emb.matrix([t.generated_doc_id for t in self.triplets])
        return q, h, g


def load_triplets(path: str | Path, embeddings: EmbeddingSet) -> TripletSet:
    """Load 3-column TSV: query_id, human_doc_id, generated_doc_id."""
    triplets: list[Triplet] = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(
                    path, line_no, f"expected 3 columns, got {len(parts)}"
                )
            triplets.append(Triplet(*parts))
    try:
        return TripletSet(triplets, embeddings)
    except ValueError as exc:
        raise FormatError(path, None, str(exc)) from None


def write_triplets(triplets: TripletSet, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for t in triplets.triplets:
            handle.write(f"{t.query_id}\t{t.human_doc_id}\t{t.generated_doc_id}\n")


@dataclass(frozen=True)
class ScoringHead:
    matrix: np.ndarray  # r x dim
    tau: float = 0.05

    def __post_init__(self) -> None:
        matrix = np.array(self.matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise ValueError("projection matrix must be 2-d")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("projection matrix has non-finite entries")
        if self.tau <= 0.0:
            raise ValueError(f"temperature must be positive, got {self.tau}")
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    @property
    def rank(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    def score(self, query_vec: np.ndarray, doc_vec: np.ndarray) -> float:
        pq = self.matrix @ query_vec
        pd = self.matrix @ doc_vec
        return float(pq @ pd / self.tau)

    def score_matrix(self, queries: np.ndarray, docs: np.ndarray) -> np.ndarray:
        """All query-vs-doc scores: (n_queries, n_docs)."""
        pq = queries @ self.matrix.T
        pd = docs @ self.matrix.T
        return pq @ pd.T / self.tau


def write_head(head: ScoringHead, path: str | Path) -> None:
    rows = ",\n    ".join(
        "[" + ", ".join(fmt17(v) for v in row) + "]" for row in head.matrix
    )
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(
            '{\n  "schema_version": 1,\n'
            f'  "rank": {head.rank},\n'
            f'  "dim": {head.dim},\n'
            f'  "tau": {fmt17(head.tau)},\n'
            f'  "matrix": [\n    {rows}\n  ]\n}}\n'
        )


def load_head(path: str | Path) -> ScoringHead:
    with open(path, encoding="utf-8") as handle:
        try:
            record = json.load(handle)
        except json.JSONDecodeError as exc:
            raise FormatError(path, None, f"invalid JSON ({exc.msg})") from None
    for key in ("rank", "dim", "tau", "matrix"):
        if key not in record:
            raise FormatError(path, None, f"missing field {key!r}")
    matrix = np.asarray(record["matrix"], dtype=np.float64)
    if matrix.shape != (record["rank"], record["dim"]):
        raise FormatError(
            path, None,
            f"matrix shape {matrix.shape} does not match declared "
            f"({record['rank']}, {record['dim']})",
        )
    return ScoringHead(matrix, float(record["tau"]))


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.0
    learning_rate: float = 0.02
    epochs: int = 100
    batch_size: int | None = None  # None = full batch
    negatives_per_query: int | None = None  # None = all in-batch docs
    seed: int = 0
    rank: int = 24
    tau: float = 0.05

    def __post_init__(self) -> None:
        if self.alpha < 0.0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.learning_rate <= 0.0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size is not None and self.batch_size < 2:
            raise ValueError("batch size must be >= 2 (in-batch negatives)")
        if self.negatives_per_query is not None and self.negatives_per_query < 1:
            raise ValueError("negatives per query must be >= 1")
        if self.rank < 1:
            raise ValueError(f"projection rank must be >= 1, got {self.rank}")
        if self.tau <= 0.0:
            raise ValueError(f"temperature must be positive, got {self.tau}")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    rank_loss: float
    debias_loss: float
    total_loss: float


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"training diverged (non-finite loss) at epoch {epoch}")


def debias_loss(scores_g: Sequence[float], scores_h: Sequence[float]) -> float:
    """Σ_m max{0, s_g[m] − s_h[m]} over paired triplet scores."""
    if len(scores_g) != len(scores_h):
        raise ValueError(
            f"paired score lists differ in length: {len(scores_g)} vs {len(scores_h)}"
        )
    return float(sum(max(0.0, g - h) for g, h in zip(scores_g, scores_h)))


def _candidate_masks(
    batch: int,
    negatives_per_query: int | None,
    rng: np.random.Generator | None,
) -> tuple[np.ndarray, np.ndarray]:
    """Candidate masks over the 2B stacked doc columns [human | generated].

    Row m of the human-positive mask admits h_m plus the in-batch
    negatives (other triplets' docs) and never g_m; the generated-positive
    mask mirrors that.  With a negative cap, negatives are subsampled per
    row via the supplied generator.
    """
    cols = 2 * batch
    mask_h = np.ones((batch, cols), dtype=bool)
    mask_g = np.ones((batch, cols), dtype=bool)
    idx = np.arange(batch)
    mask_h[idx, batch + idx] = False  # own generated doc is not a candidate
    mask_g[idx, idx] = False  # own human doc is not a candidate
    if negatives_per_query is None:
        return mask_h, mask_g
    if rng is None:
        raise ValueError("negative subsampling requires a generator")
    for mask, pos_col in ((mask_h, idx), (mask_g, batch + idx)):
        for m in range(batch):
            eligible = np.flatnonzero(mask[m])
            eligible = eligible[eligible != pos_col[m]]
            keep = rng.choice(
                eligible,
                size=min(negatives_per_query, eligible.size),
                replace=False,
            )
            row = np.zeros(cols, dtype=bool)
            row[keep] = True
            row[pos_col[m]] = True
            mask[m] = row
    return mask_h, mask_g


def _losses_and_weights(
    a_matrix: np.ndarray,
    queries: np.ndarray,
    humans: np.ndarray,
    generated: np.ndarray,
    tau: float,
    mask_h: np.ndarray,
    mask_g: np.ndarray,
) -> tuple[float, float, np.ndarray, np.ndarray]:
    """Forward pass returning (L_rank, L_debias, dL_rank/dS, dL_debias/dS).

    S is the (B, 2B) score block [s(q, h_j) | s(q, g_j)]; the weight
    matrices are the loss gradients in score units.
    """
    batch = queries.shape[0]
    proj_q = queries @ a_matrix.T
    docs = np.vstack([humans, generated])
    proj_d = docs @ a_matrix.T
    scores = proj_q @ proj_d.T / tau
    idx = np.arange(batch)

    rank_total = 0.0
    w_rank = np.zeros_like(scores)
    for mask, pos_col in ((mask_h, idx), (mask_g, batch + idx)):
        masked = np.where(mask, scores, -np.inf)
        row_max = masked.max(axis=1, keepdims=True)
        lse = row_max[:, 0] + np.log(
            np.exp(masked - row_max).sum(axis=1)
        )
        rank_total += float(np.sum(lse - scores[idx, pos_col]))
        softmax = np.exp(masked - lse[:, None])
        softmax[~mask] = 0.0
        w_rank += softmax
        w_rank[idx, pos_col] -= 1.0
    n_terms = 2 * batch
    rank_value = rank_total / n_terms
    w_rank /= n_terms

    diffs = scores[idx, batch + idx] - scores[idx, idx]
    active = diffs > 0.0  # subgradient 0 at ties
    debias_value = float(np.sum(diffs[active]))
    w_debias = np.zeros_like(scores)
    w_debias[idx[active], batch + idx[active]] = 1.0
    w_debias[idx[active], idx[active]] = -1.0
    return rank_value, debias_value, w_rank, w_debias


def _weights_to_grad(
    a_matrix: np.ndarray,
    queries: np.ndarray,
    humans: np.ndarray,
    generated: np.ndarray,
    tau: float,
    weights: np.ndarray,
) -> np.ndarray:
    docs = np.vstack([humans, generated])
    cross = queries.T @ (weights @ docs)
    return a_matrix @ (cross + cross.T) / tau


def _total_loss_and_grad(
    a_matrix: np.ndarray,
    queries: np.ndarray,
    humans: np.ndarray,
    generated: np.ndarray,
    alpha: float,
    tau: float,
    mask_h: np.ndarray,
    mask_g: np.ndarray,
) -> tuple[float, float, np.ndarray]:
    rank_value, debias_value, w_rank, w_debias = _losses_and_weights(
        a_matrix, queries, humans, generated, tau, mask_h, mask_g
    )
    if alpha == 0.0:
        # Keep the α = 0 trajectory bit-identical to a rank-only build.
        weights = w_rank
    else:
        weights = w_rank + alpha * w_debias
    grad = _weights_to_grad(a_matrix, queries, humans, generated, tau, weights)
    return rank_value, debias_value, grad


def rank_loss(head: ScoringHead, triplets: TripletSet) -> float:
    """InfoNCE over the whole set as one batch (both docs as positives)."""
    if len(triplets) < 2:
        raise ValueError("need at least 2 triplets for in-batch negatives")
    queries, humans, generated = triplets.arrays()
    mask_h, mask_g = _candidate_masks(len(triplets), None, None)
    value, _, _, _ = _losses_and_weights(
        head.matrix, queries, humans, generated, head.tau, mask_h, mask_g
    )
    return value


def initial_matrix(rank: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Identity-like start: [I_r | 0] plus Gaussian noise of scale 1e-3."""
    if rank > dim:
        raise ValueError(f"rank {rank} exceeds embedding dim {dim}")
    a_matrix = np.zeros((rank, dim))
    a_matrix[:, :rank] = np.eye(rank)
    return a_matrix + 1e-3 * rng.standard_normal((rank, dim))


def train(triplets: TripletSet, cfg: TrainConfig) -> tuple[ScoringHead, list[EpochStats]]:
    """First-order descent on L_rank + α·L_debias with a fixed step.

    The per-epoch log records the losses at the parameters entering that
    epoch; L_debias is always reported, but with α = 0 it never touches
    the update.  Identical data and config reproduce the head exactly.
    """
    if len(triplets) < 2:
        raise ValueError("need at least 2 triplets for in-batch negatives")
    queries, humans, generated = triplets.arrays()
    dim = queries.shape[1]
    rng = np.random.default_rng(cfg.seed)
    a_matrix = initial_matrix(cfg.rank, dim, rng)

    log: list[EpochStats] = []
    n_total = len(triplets)
    for epoch in range(1, cfg.epochs + 1):
        if cfg.batch_size is None:
            order = np.arange(n_total)
            batch_slices = [order]
        else:
            order = rng.permutation(n_total)
            batch_slices = [
                order[start:start + cfg.batch_size]
                for start in range(0, n_total, cfg.batch_size)
            ]
            batch_slices = [b for b in batch_slices if b.size >= 2]
        epoch_rank = 0.0
        epoch_debias = 0.0
        for rows in batch_slices:
            mask_h, mask_g = _candidate_masks(
                rows.size, cfg.negatives_per_query,
                rng if cfg.negatives_per_query is not None else None,
            )
            rank_value, debias_value, grad = _total_loss_and_grad(
                a_matrix, queries[rows], humans[rows], generated[rows],
                cfg.alpha, cfg.tau, mask_h, mask_g,
            )
            if not (math.isfinite(rank_value) and math.isfinite(debias_value)):
                raise DivergenceError(epoch)
            a_matrix = a_matrix - cfg.learning_rate * grad
            epoch_rank += rank_value * rows.size
            epoch_debias += debias_value
        epoch_rank /= sum(b.size for b in batch_slices)
        total = epoch_rank + cfg.alpha * epoch_debias
        if not math.isfinite(total):
            raise DivergenceError(epoch)
        log.append(EpochStats(epoch, epoch_rank, epoch_debias, total))
    return ScoringHead(a_matrix, cfg.tau), log


def gradient_check(
    head: ScoringHead,
    triplets: TripletSet,
    alpha: float,
    step: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per entry is |a−n| / max(1, |a|, |n|).  If any hinge
    sits within 10·step of a tie, the probe point is nudged by seeded
    noise first so the loss is differentiable where we differentiate.
    """
    if len(triplets) < 2:
        raise ValueError("need at least 2 triplets for in-batch negatives")
    queries, humans, generated = triplets.arrays()
    mask_h, mask_g = _candidate_masks(len(triplets), None, None)
    tau = head.tau
    a_matrix = np.array(head.matrix, dtype=np.float64)

    def hinge_margin(matrix: np.ndarray) -> float:
        proj_q = matrix @ queries.T
        diffs = np.einsum("rm,rm->m", proj_q, matrix @ generated.T) - np.einsum(
            "rm,rm->m", proj_q, matrix @ humans.T
        )
        return float(np.min(np.abs(diffs))) / tau

    nudge_rng = np.random.default_rng(0)
    attempts = 0
    while hinge_margin(a_matrix) < 10.0 * step and attempts < 20:
        a_matrix = a_matrix + 1e-4 * nudge_rng.standard_normal(a_matrix.shape)
        attempts += 1

    def total(matrix: np.ndarray) -> float:
        rank_value, debias_value, _, _ = _losses_and_weights(
            matrix, queries, humans, generated, tau, mask_h, mask_g
        )
        return rank_value + alpha * debias_value

    rank_value, debias_value, w_rank, w_debias = _losses_and_weights(
        a_matrix, queries, humans, generated, tau, mask_h, mask_g
    )
    analytic = _weights_to_grad(
        a_matrix, queries, humans, generated, tau, w_rank + alpha * w_debias
    )

    worst = 0.0
    for i in range(a_matrix.shape[0]):
        for j in range(a_matrix.shape[1]):
            probe = a_matrix.copy()
            probe[i, j] = a_matrix[i, j] + step
            upper = total(probe)
            probe[i, j] = a_matrix[i, j] - step
            lower = total(probe)
            numeric = (upper - lower) / (2.0 * step)
            denom = max(1.0, abs(analytic[i, j]), abs(numeric))
            worst = max(worst, abs(analytic[i, j] - numeric) / denom)
    return worst


@dataclass(frozen=True)
class SweepRow:
    alpha: float
    report: BiasReport
    human_only_ndcg1: float
    final_rank_loss: float
    final_debias_loss: float

    def to_json_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "report": self.report.to_json_dict(),
            "human_only_ndcg1": self.human_only_ndcg1,
            "final_rank_loss": self.final_rank_loss,
            "final_debias_loss": self.final_debias_loss,
        }


def _evaluate_head(
    head: ScoringHead,
    eval_triplets: TripletSet,
    cutoffs: Sequence[int],
) -> tuple[BiasReport, float]:
    """Masked evaluation of a trained head on held-out triplets.

    The candidate pool is every human and generated document named by the
    held-out triplets; each query's positives are its own pair.  Also
    returns NDCG@1 over the human documents alone, which measures plain
    ranking quality with no generated competitors present.
    """
    emb = eval_triplets.embeddings
    doc_ids: list[str] = []
    source_map: dict[str, Source] = {}
    for t in eval_triplets.triplets:
        for did, source in (
            (t.human_doc_id, Source.HUMAN),
            (t.generated_doc_id, Source.GENERATED),
        ):
            if did not in source_map:
                doc_ids.append(did)
                source_map[did] = source
    human_ids = [d for d in doc_ids if source_map[d] is Source.HUMAN]

    qrels = QrelSet(
        {
            key: 1
            for t in eval_triplets.triplets
            for key in ((t.query_id, t.human_doc_id), (t.query_id, t.generated_doc_id))
        }
    )
    query_ids = [t.query_id for t in eval_triplets.triplets]
    query_mat = emb.matrix(query_ids)

    def runs_over(ids: Sequence[str]) -> list[RunList]:
        scores = head.score_matrix(query_mat, emb.matrix(ids))
        return [
            RunList.from_scores(qid, zip(ids, scores[i].tolist()))
            for i, qid in enumerate(query_ids)
        ]

    report = evaluate_runs(runs_over(doc_ids), qrels, source_map, cutoffs)

    human_qrels = QrelSet(
        {(t.query_id, t.human_doc_id): 1 for t in eval_triplets.triplets}
    )
    human_map = {d: Source.HUMAN for d in human_ids}
    human_scores = 0.0
    for run in runs_over(human_ids):
        human_scores += masked_metric(
            run, human_qrels, human_map, Source.HUMAN, "ndcg", 1
        )
    return report, human_scores / len(query_ids)


def _sweep_one(
    args: tuple[TripletSet, TripletSet, TrainConfig, float, tuple[int, ...]],
) -> SweepRow:
    train_triplets, eval_triplets, cfg, alpha, cutoffs = args
    head, log = train(train_triplets, replace(cfg, alpha=alpha))
    report, human_only = _evaluate_head(head, eval_triplets, cutoffs)
    return SweepRow(
        alpha=alpha,
        report=report,
        human_only_ndcg1=human_only,
        final_rank_loss=log[-1].rank_loss,
        final_debias_loss=log[-1].debias_loss,
    )


def alpha_sweep(
    train_triplets: TripletSet,
    eval_triplets: TripletSet,
    cfg: TrainConfig,
    alphas: Sequence[float],
    cutoffs: Sequence[int] = (1, 3, 5),
    threads: int = 1,
) -> list[SweepRow]:
    """One full training plus held-out masked evaluation per α, sorted by α.

    Each α is an independent training run, so with ``threads > 1`` the
    runs execute in worker processes; results are collected in α order
    either way, so the output is identical.
    """
    if not alphas:
        raise ValueError("alpha sweep needs at least one value")
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    jobs = [
        (train_triplets, eval_triplets, cfg, alpha, tuple(cutoffs))
        for alpha in sorted(alphas)
    ]
    if threads == 1 or len(jobs) == 1:
        return [_sweep_one(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
        return list(pool.map(_sweep_one, jobs))


def best_alpha(rows: Sequence[SweepRow]) -> SweepRow:
    """The sweep row closest to zero bias on NDCG@1 (ties: smaller α)."""
    if not rows:
        raise ValueError("empty sweep")
    return min(
        rows, key=lambda r: (abs(r.report.cell("ndcg", 1).relative_delta), r.alpha)
    )


def make_shortcut_dataset(
    n_train: int = 200,
    n_eval: int = 100,
    dim: int = 32,
    seed: int = 42,
    noise_scale: float = 0.3,
    shortcut_dim: int = 8,
    shortcut_gain: float = 1.6,
    content_scale: float = 0.85,
) -> tuple[TripletSet, TripletSet]:
    """Synthetic triplets with a planted stylistic shortcut.

    The first ``shortcut_dim`` coordinates play the "generated style"
    subspace.  A human doc is its query plus isotropic noise.  A generated
    doc reweights the query's own components before the same noise:
    multiplied by ``shortcut_gain`` inside the style subspace (the rewrite
    overexpresses style/topic markers) and by ``content_scale`` outside it
    (specifics get washed out).  A scorer that leans on the style subspace
    therefore prefers generated docs query by query — a signal contrastive
    training has no reason to discard — while a scorer that attenuates
    those coordinates sees the faded content and prefers the human docs.
    The hinge weight α steers between the two regimes.

    Returns (train, eval) splits sharing one embedding set.
    """
    if n_train < 2 or n_eval < 1:
        raise ValueError("need at least 2 train and 1 eval triplets")
    if not 0 < shortcut_dim < dim:
        raise ValueError(f"shortcut_dim must be in (0, {dim}), got {shortcut_dim}")
    rng = np.random.default_rng(seed)
    reweight = np.full(dim, content_scale)
    reweight[:shortcut_dim] = shortcut_gain

    def unit(vec: np.ndarray) -> np.ndarray:
        return vec / np.linalg.norm(vec)

    vectors: dict[str, np.ndarray] = {}
    triplets: list[Triplet] = []
    for i in range(n_train + n_eval):
        query = unit(rng.standard_normal(dim) / math.sqrt(dim))
        human = unit(
            query + noise_scale * rng.standard_normal(dim) / math.sqrt(dim)
        )
        generated = unit(
            reweight * query
            + noise_scale * rng.standard_normal(dim) / math.sqrt(dim)
        )
        qid = f"q{i:04d}"
        hid = f"d{i:04d}"
        gid = f"d{i:04d}@syn"
        vectors[qid] = query
        vectors[hid] = human
        vectors[gid] = generated
        triplets.append(Triplet(qid, hid, gid))

    embeddings = EmbeddingSet.from_arrays(vectors)
    return (
        TripletSet(triplets[:n_train], embeddings),
        TripletSet(triplets[n_train:], embeddings),
    )
