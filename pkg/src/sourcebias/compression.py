"""Singular-value spectra of embedding matrices and log-perplexity stats.

The spectrum of a corpus embedding matrix summarizes how concentrated its
semantic content is: a head-heavy spectrum with a light tail indicates
focused, low-noise documents.  Perplexity here follows the log convention
throughout: PPL(d) = −(1/S)·Σ log-probs, reported in nats and never
exponentiated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from sourcebias.builder import Histogram, histogram
from sourcebias.store import EmbeddingSet, TokenLogProbs


@dataclass(frozen=True)
class Spectrum:
    """Descending singular values of an n-docs x d-dim matrix."""

    singular_values: tuple[float, ...]
    n_docs: int
    dim: int

    def __post_init__(self) -> None:
        if len(self.singular_values) != min(self.n_docs, self.dim):
            raise ValueError(
                f"expected {min(self.n_docs, self.dim)} singular values, "
                f"got {len(self.singular_values)}"
            )
        prev = math.inf
        for sv in self.singular_values:
            if sv < 0.0 or not math.isfinite(sv):
                raise ValueError(f"invalid singular value {sv!r}")
            if sv > prev:
                raise ValueError("singular values must be non-increasing")
            prev = sv

    def normalized(self) -> tuple[float, ...]:
        total = sum(self.singular_values)
        if total == 0.0:
            raise ValueError("zero spectrum cannot be normalized")
        return tuple(sv / total for sv in self.singular_values)


def gram_singular_values(matrix: np.ndarray) -> np.ndarray:
    """Descending singular values via the Gram-matrix eigendecomposition.

    Works on the smaller Gram side (d x d when n >= d, else n x n) with a
    symmetric eigensolver; negative rounding noise is clipped before the
    square root.  At an exact zero singular value this route's accuracy is
    limited to sqrt(eps) relative to the largest value, because eigenvalue
    rounding noise of order eps·lambda_max survives the square root.
    """
    n, d = matrix.shape
    if n >= d:
        gram = matrix.T @ matrix
    else:
        gram = matrix @ matrix.T
    eigenvalues = np.linalg.eigh(gram)[0]
    eigenvalues[eigenvalues < 0.0] = 0.0
    return np.sqrt(eigenvalues)[::-1]


# Agreement demanded between the two spectrum routes, relative to the
# largest singular value.  8·sqrt(eps) covers the Gram route's intrinsic
# error on rank-deficient matrices while still catching formula mistakes,
# which show up orders of magnitude above this line.
_SPECTRUM_VERIFY_RTOL = max(1e-8, 8.0 * math.sqrt(float(np.finfo(np.float64).eps)))


def singular_values(
    embeddings: EmbeddingSet | np.ndarray,
    center: bool = False,
    verify: bool = True,
) -> Spectrum:
    """Spectrum of the embedding matrix via direct SVD.

    With ``verify`` the values are cross-checked against the square roots
    of the Gram-matrix eigenvalues from a symmetric eigensolver — an
    independent route through different LAPACK code.  Rows are used as-is
    unless ``center`` subtracts the column means first.
    """
    if isinstance(embeddings, EmbeddingSet):
        matrix = embeddings.matrix()
    else:
        matrix = np.asarray(embeddings, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] < 1 or matrix.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-d matrix, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise ValueError("embedding matrix has non-finite entries")
    if center:
        matrix = matrix - matrix.mean(axis=0, keepdims=True)
    n, d = matrix.shape

    values = np.linalg.svd(matrix, compute_uv=False)

    if verify:
        reference = gram_singular_values(matrix)
        scale = max(float(values[0]), 1.0) if values.size else 1.0
        worst = float(np.max(np.abs(values - reference)))
        if worst > _SPECTRUM_VERIFY_RTOL * scale:
            raise ArithmeticError(
                f"direct SVD disagrees with Gram-route singular values "
                f"(max abs diff {worst:.3e}, scale {scale:.3e})"
            )
    return Spectrum(tuple(float(v) for v in values), n, d)


@dataclass(frozen=True)
class SpectrumComparison:
    """Generated-over-human view of two equal-length spectra."""

    ratios: tuple[float, ...]
    human_normalized: tuple[float, ...]
    generated_normalized: tuple[float, ...]
    head_ratio_mean: float
    tail_ratio_mean: float
    generated_head_heavier: bool
    generated_tail_lighter: bool
    summary: str

    def to_json_dict(self) -> dict:
        def jsonable(values: Iterable[float]) -> list:
            return [v if math.isfinite(v) else None for v in values]

        return {
            "ratios": jsonable(self.ratios),
            "human_normalized": list(self.human_normalized),
            "generated_normalized": list(self.generated_normalized),
            "head_ratio_mean": self.head_ratio_mean if math.isfinite(self.head_ratio_mean) else None,
            "tail_ratio_mean": self.tail_ratio_mean if math.isfinite(self.tail_ratio_mean) else None,
            "generated_head_heavier": self.generated_head_heavier,
            "generated_tail_lighter": self.generated_tail_lighter,
            "summary": self.summary,
        }


def compare_spectra(human: Spectrum, generated: Spectrum) -> SpectrumComparison:
    """Per-index ratios σ_i^G/σ_i^H plus normalized spectra and a head/tail
    summary over the top and bottom 10% of indices (at least one each)."""
    if len(human.singular_values) != len(generated.singular_values):
        raise ValueError(
            f"spectrum length mismatch: {len(human.singular_values)} vs "
            f"{len(generated.singular_values)}"
        )
    ratios: list[float] = []
    for h, g in zip(human.singular_values, generated.singular_values):
        if h == 0.0:
            ratios.append(1.0 if g == 0.0 else math.inf)
        else:
            ratios.append(g / h)
    count = len(ratios)
    span = max(1, count // 10)
    head_mean = float(np.mean(ratios[:span]))
    tail_mean = float(np.mean(ratios[-span:]))
    head_heavier = head_mean > 1.0
    tail_lighter = tail_mean < 1.0
    if head_heavier and tail_lighter:
        summary = "generated-head-heavy"
    elif head_mean < 1.0 and tail_mean > 1.0:
        summary = "human-head-heavy"
    elif all(r == 1.0 for r in ratios):
        summary = "no-difference"
    else:
        summary = "mixed"
    return SpectrumComparison(
        ratios=tuple(ratios),
        human_normalized=human.normalized(),
        generated_normalized=generated.normalized(),
        head_ratio_mean=head_mean,
        tail_ratio_mean=tail_mean,
        generated_head_heavier=head_heavier,
        generated_tail_lighter=tail_lighter,
        summary=summary,
    )


def perplexity(logprobs: TokenLogProbs) -> float:
    """Log perplexity in nats: −(1/S)·Σ_s logprobs_s."""
    return -sum(logprobs.logprobs) / logprobs.token_count


@dataclass(frozen=True)
class PplSummary:
    human_ppl: Mapping[str, float]
    generated_ppl: Mapping[str, float]
    human_mean: float
    generated_mean: float
    human_median: float
    generated_median: float
    mean_difference: float
    human_hist: Histogram
    generated_hist: Histogram

    def to_json_dict(self) -> dict:
        return {
            "human": {
                "per_doc": dict(self.human_ppl),
                "mean": self.human_mean,
                "median": self.human_median,
                "hist": self.human_hist.to_dict(),
            },
            "generated": {
                "per_doc": dict(self.generated_ppl),
                "mean": self.generated_mean,
                "median": self.generated_median,
                "hist": self.generated_hist.to_dict(),
            },
            "mean_difference": self.mean_difference,
        }


def _as_records(collection: Mapping[str, TokenLogProbs] | Iterable[TokenLogProbs]) -> list[TokenLogProbs]:
    if isinstance(collection, Mapping):
        return list(collection.values())
    return list(collection)


def ppl_summary(
    human: Mapping[str, TokenLogProbs] | Iterable[TokenLogProbs],
    generated: Mapping[str, TokenLogProbs] | Iterable[TokenLogProbs],
) -> PplSummary:
    """Per-source log-perplexity distributions and their mean difference.

    The difference is generated mean minus human mean, so lower perplexity
    on the generated side shows up as a negative number.  Histograms share
    a common range across both sources.
    """
    human_records = _as_records(human)
    generated_records = _as_records(generated)
    if not human_records or not generated_records:
        raise ValueError("both log-prob collections must be non-empty")
    human_ids = {r.doc_id for r in human_records}
    overlap = human_ids & {r.doc_id for r in generated_records}
    if overlap:
        raise ValueError(
            f"doc ids appear in both sources: {sorted(overlap)[:5]!r}"
        )
    human_ppl = {r.doc_id: perplexity(r) for r in human_records}
    generated_ppl = {r.doc_id: perplexity(r) for r in generated_records}
    all_values = list(human_ppl.values()) + list(generated_ppl.values())
    lo = min(all_values)
    hi = max(all_values)
    if hi == lo:
        hi = lo + 1.0
    h_mean = float(np.mean(list(human_ppl.values())))
    g_mean = float(np.mean(list(generated_ppl.values())))
    return PplSummary(
        human_ppl=human_ppl,
        generated_ppl=generated_ppl,
        human_mean=h_mean,
        generated_mean=g_mean,
        human_median=float(np.median(list(human_ppl.values()))),
        generated_median=float(np.median(list(generated_ppl.values()))),
        mean_difference=g_mean - h_mean,
        human_hist=histogram(list(human_ppl.values()), lo, hi),
        generated_hist=histogram(list(generated_ppl.values()), lo, hi),
    )
