"""Shared helpers for the test suite."""

from __future__ import annotations

import numpy as np

from sourcebias.store import (
    Query,
    QrelSet,
    RunList,
    Source,
    SourcedDocument,
)


def human_doc(doc_id: str, text: str, title: str = "") -> SourcedDocument:
    return SourcedDocument(doc_id, title, text, Source.HUMAN)


def generated_doc(
    doc_id: str, text: str, origin_id: str, model_tag: str = "m1", title: str = ""
) -> SourcedDocument:
    return SourcedDocument(
        doc_id, title, text, Source.GENERATED,
        model_tag=model_tag, origin_id=origin_id,
    )


def query(query_id: str, text: str = "some text") -> Query:
    return Query(query_id, text)


def random_ranking_case(
    rng: np.random.Generator,
    max_docs: int = 10,
    max_positives: int = 4,
) -> tuple[RunList, QrelSet, dict[str, Source]]:
    """One random judged ranking: ≤ max_docs docs with random sources, up to
    max_positives of them graded 1..3, scored and ranked by random scores."""
    n_docs = int(rng.integers(2, max_docs + 1))
    doc_ids = [f"d{i}" for i in range(n_docs)]
    source_map = {
        did: (Source.HUMAN if rng.random() < 0.5 else Source.GENERATED)
        for did in doc_ids
    }
    n_pos = int(rng.integers(0, min(max_positives, n_docs) + 1))
    positives = list(rng.choice(n_docs, size=n_pos, replace=False))
    qrels = QrelSet(
        {("q0", doc_ids[i]): int(rng.integers(1, 4)) for i in positives}
        or {("q0", doc_ids[0]): 0}
    )
    scores = rng.standard_normal(n_docs)
    run = RunList.from_scores("q0", zip(doc_ids, scores.tolist()))
    return run, qrels, source_map
