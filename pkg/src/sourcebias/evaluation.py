"""Per-source masked ranking metrics and the relative bias percentage.

A masked metric grades the original mixed ranking after forcing every
positive of the non-target source to relevance 0: target Human measures
how well human positives rank among everything, target Generated does the
same for generated positives.  The ranking itself is never re-ordered and
non-target documents still occupy ranks, so the two views compete for the
same positions.

Relative Δ = (h − g) / (½(h + g)) × 100 compares the per-source means;
positive values mean human content ranks higher.  It is antisymmetric,
scale-invariant and bounded by ±200 (attained when one side is 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from sourcebias.store import Corpus, QrelSet, RunList, Source

METRICS = ("ndcg", "map")


def _as_source_map(corpus: Corpus | Mapping[str, Source]) -> Mapping[str, Source]:
    if isinstance(corpus, Corpus):
        return corpus.source_map()
    return corpus


class MaskedQrels:
    """Judgment view where non-target-source grades are forced to 0."""

    def __init__(
        self,
        qrels: QrelSet,
        source_map: Mapping[str, Source],
        target: Source,
    ):
        self._qrels = qrels
        self._source_map = source_map
        self.target = target

    def _source_of(self, doc_id: str) -> Source:
        try:
            return self._source_map[doc_id]
        except KeyError:
            raise ValueError(
                f"document {doc_id!r} has no source assignment"
            ) from None

    def grade(self, qid: str, doc_id: str) -> int:
        if self._source_of(doc_id) is not self.target:
            return 0
        return self._qrels.grade(qid, doc_id)

    def positives_for(self, qid: str) -> dict[str, int]:
        """Target-source documents with positive grade, for one query."""
        out: dict[str, int] = {}
        for doc_id, grade in self._qrels.grades_for(qid).items():
            if grade > 0 and self._source_of(doc_id) is self.target:
                out[doc_id] = grade
        return out


def dcg_at_k(
    run: RunList,
    qrels: QrelSet,
    source_map: Corpus | Mapping[str, Source],
    target: Source | None,
    k: int,
) -> float:
    """Masked DCG@K with linear gain; ``target=None`` leaves grades unmasked."""
    if k < 1:
        raise ValueError(f"cutoff must be >= 1, got {k}")
    smap = _as_source_map(source_map)
    total = 0.0
    for entry in run.entries[:k]:
        if target is None:
            grade = qrels.grade(run.query_id, entry.doc_id)
            if entry.doc_id not in smap:
                raise ValueError(f"document {entry.doc_id!r} has no source assignment")
        else:
            grade = MaskedQrels(qrels, smap, target).grade(run.query_id, entry.doc_id)
        total += grade / math.log2(entry.rank + 1)
    return total


def ndcg_at_k(
    run: RunList,
    qrels: QrelSet,
    source_map: Corpus | Mapping[str, Source],
    target: Source,
    k: int,
) -> float:
    """Masked NDCG@K: ideal DCG uses all target-source positives, retrieved
    or not; 0 when the query has none."""
    if k < 1:
        raise ValueError(f"cutoff must be >= 1, got {k}")
    smap = _as_source_map(source_map)
    masked = MaskedQrels(qrels, smap, target)
    positives = masked.positives_for(run.query_id)
    if not positives:
        return 0.0
    dcg = 0.0
    for entry in run.entries[:k]:
        dcg += masked.grade(run.query_id, entry.doc_id) / math.log2(entry.rank + 1)
    ideal = 0.0
    for i, grade in enumerate(sorted(positives.values(), reverse=True)[:k], start=1):
        ideal += grade / math.log2(i + 1)
    return dcg / ideal


def map_at_k(
    run: RunList,
    qrels: QrelSet,
    source_map: Corpus | Mapping[str, Source],
    target: Source,
    k: int,
) -> float:
    """Masked MAP@K, normalized by all target-source positives (R_t).

    Precision@k counts every document at ranks <= k in the denominator,
    non-target ones included; grades are binarized.
    """
    if k < 1:
        raise ValueError(f"cutoff must be >= 1, got {k}")
    smap = _as_source_map(source_map)
    masked = MaskedQrels(qrels, smap, target)
    r_t = len(masked.positives_for(run.query_id))
    if r_t == 0:
        return 0.0
    hits = 0
    total = 0.0
    for entry in run.entries[:k]:
        if masked.grade(run.query_id, entry.doc_id) > 0:
            hits += 1
            total += hits / entry.rank
    return total / r_t


def masked_metric(
    run: RunList,
    qrels: QrelSet,
    source_map: Corpus | Mapping[str, Source],
    target: Source,
    metric: str,
    k: int,
) -> float:
    if metric == "ndcg":
        return ndcg_at_k(run, qrels, source_map, target, k)
    if metric == "map":
        return map_at_k(run, qrels, source_map, target, k)
    raise ValueError(f"unknown metric {metric!r} (expected 'ndcg' or 'map')")


def relative_delta(metric_human: float, metric_generated: float) -> float:
    """(h − g) / (½(h + g)) × 100; defined as 0 when both sides are 0."""
    if metric_human < 0 or metric_generated < 0:
        raise ValueError(
            f"metrics must be non-negative, got ({metric_human}, {metric_generated})"
        )
    denom = 0.5 * (metric_human + metric_generated)
    if denom == 0.0:
        return 0.0
    return (metric_human - metric_generated) / denom * 100.0


@dataclass(frozen=True)
class MetricCell:
    human: float
    generated: float
    relative_delta: float
    zero_denominator: bool


@dataclass(frozen=True)
class BiasReport:
    """Per-source metric means (stored in [0,1]) and their Relative Δ."""

    query_count: int
    cutoffs: tuple[int, ...]
    cells: Mapping[tuple[str, int], MetricCell]
    missing_queries: tuple[str, ...]

    SCHEMA_VERSION = 1

    def cell(self, metric: str, k: int) -> MetricCell:
        return self.cells[(metric, k)]

    def to_json_dict(self) -> dict:
        metrics: dict[str, dict[str, dict]] = {}
        for metric in METRICS:
            per_k: dict[str, dict] = {}
            for k in self.cutoffs:
                cell = self.cells[(metric, k)]
                per_k[str(k)] = {
                    "human": cell.human,
                    "generated": cell.generated,
                    "relative_delta": cell.relative_delta,
                    "zero_denominator": cell.zero_denominator,
                }
            metrics[metric] = per_k
        return {
            "schema_version": self.SCHEMA_VERSION,
            "query_count": self.query_count,
            "cutoffs": list(self.cutoffs),
            "metrics": metrics,
            "missing_queries": list(self.missing_queries),
        }

    def render_text(self) -> str:
        """Percent-scale table matching how the numbers are usually quoted."""
        lines = [f"queries evaluated: {self.query_count}"]
        if self.missing_queries:
            lines.append(f"queries without a run (scored 0): {len(self.missing_queries)}")
        header = f"{'metric':<10} {'human':>8} {'generated':>10} {'rel-delta':>10}"
        lines.append(header)
        for metric in METRICS:
            for k in self.cutoffs:
                cell = self.cells[(metric, k)]
                flag = " *" if cell.zero_denominator else ""
                lines.append(
                    f"{metric.upper() + '@' + str(k):<10} "
                    f"{cell.human * 100.0:>8.1f} {cell.generated * 100.0:>10.1f} "
                    f"{cell.relative_delta:>10.1f}{flag}"
                )
        if any(c.zero_denominator for c in self.cells.values()):
            lines.append("* both per-source means are 0; delta reported as 0")
        return "\n".join(lines)


def evaluate_runs(
    runs: Sequence[RunList],
    qrels: QrelSet,
    source_map: Corpus | Mapping[str, Source],
    cutoffs: Sequence[int] = (1, 3, 5),
) -> BiasReport:
    """Mean masked metrics over every judged query, plus Relative Δ.

    Every query in the qrels counts toward the means; judged queries
    missing from the runs score 0 on both sources and are flagged.
    """
    if not runs:
        raise ValueError("no runs to evaluate")
    if not cutoffs:
        raise ValueError("at least one cutoff is required")
    for k in cutoffs:
        if k < 1:
            raise ValueError(f"cutoff must be >= 1, got {k}")
    smap = _as_source_map(source_map)
    by_query: dict[str, RunList] = {}
    for run in runs:
        if run.query_id in by_query:
            raise ValueError(f"duplicate run for query {run.query_id!r}")
        by_query[run.query_id] = run
    judged = set(qrels.query_ids())
    for qid in by_query:
        if qid not in judged:
            raise ValueError(f"run for query {qid!r} has no judgments")

    query_ids = sorted(judged)
    missing = tuple(q for q in query_ids if q not in by_query)
    cells: dict[tuple[str, int], MetricCell] = {}
    for metric in METRICS:
        for k in cutoffs:
            sums = {Source.HUMAN: 0.0, Source.GENERATED: 0.0}
            for qid in query_ids:
                run = by_query.get(qid)
                if run is None:
                    continue
                for target in (Source.HUMAN, Source.GENERATED):
                    sums[target] += masked_metric(run, qrels, smap, target, metric, k)
            n = len(query_ids)
            h_mean = sums[Source.HUMAN] / n
            g_mean = sums[Source.GENERATED] / n
            cells[(metric, k)] = MetricCell(
                human=h_mean,
                generated=g_mean,
                relative_delta=relative_delta(h_mean, g_mean),
                zero_denominator=(h_mean + g_mean) == 0.0,
            )
    return BiasReport(
        query_count=len(query_ids),
        cutoffs=tuple(cutoffs),
        cells=cells,
        missing_queries=missing,
    )
