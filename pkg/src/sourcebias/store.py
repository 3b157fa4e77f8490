"""Data model and file IO for corpora, queries, qrels, embeddings, token
log-probabilities and run files.

Formats (one record per line, UTF-8, no BOM):

- corpus JSONL      {"_id": str, "title": str, "text": str,
                     "source": "human" | "generated",
                     "model": str?, "origin_id": str?}
  Generated documents carry ``model`` and ``origin_id`` and use ids of the
  form ``<origin_id>@<model>``; human documents carry neither field.
- queries JSONL     {"_id": str, "text": str}
- qrels TSV         ``query-id<TAB>doc-id<TAB>grade`` with non-negative
  integer grades.  The four-column TREC layout ``qid 0 docid grade`` is
  accepted on load and written in the three-column form.
- embeddings JSONL  {"_id": str, "vector": [float, ...]}, one fixed
  dimension per file.
- log-probs JSONL   {"_id": str, "logprobs": [float, ...]}, every value
  finite and <= 0 (natural log of a token probability).
- run file          ``qid Q0 docid rank score tag`` whitespace-separated,
  ranks ascending and contiguous per query, scores non-increasing.

Scores and vector components are written with 17 significant digits so a
write/load round trip reproduces every float bit for bit.  Loaded
structures are immutable after construction and safe to share across
threads; loading itself is single-threaded per file.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence

import numpy as np


class FormatError(ValueError):
    """A file violated one of the formats documented in this module."""

    def __init__(self, path: str | Path, line_no: int | None, message: str):
        self.path = str(path)
        self.line_no = line_no
        if line_no is None:
            super().__init__(f"{path}: {message}")
        else:
            super().__init__(f"{path}:{line_no}: {message}")


class Source(str, Enum):
    HUMAN = "human"
    GENERATED = "generated"


def fmt17(x: float) -> str:
    """Format a float with 17 significant digits (round-trip exact)."""
    return format(float(x), ".17g")


@dataclass(frozen=True)
class SourcedDocument:
    doc_id: str
    title: str
    text: str
    source: Source
    model_tag: str | None = None
    origin_id: str | None = None

    def __post_init__(self) -> None:
        if not self.doc_id:
            raise ValueError("document id must be non-empty")
        if self.source is Source.GENERATED:
            if not self.origin_id:
                raise ValueError(
                    f"generated document {self.doc_id!r} lacks an origin_id"
                )
            if not self.model_tag:
                raise ValueError(
                    f"generated document {self.doc_id!r} lacks a model tag"
                )
        else:
            if self.origin_id is not None:
                raise ValueError(
                    f"human document {self.doc_id!r} must not carry an origin_id"
                )
            if self.model_tag is not None:
                raise ValueError(
                    f"human document {self.doc_id!r} must not carry a model tag"
                )


@dataclass(frozen=True)
class Query:
    query_id: str
    text: str

    def __post_init__(self) -> None:
        if not self.query_id:
            raise ValueError("query id must be non-empty")
        if not self.text.strip():
            raise ValueError(f"query {self.query_id!r} has empty text")


class Corpus:
    """An immutable collection of documents with unique ids.

    Any ``origin_id`` must resolve to a human document in the same
    collection; this is checked once at construction so document order
    in the source file does not matter.  Single-source views produced by
    :meth:`subset` skip the cross-reference check, since a generated
    document's partner is deliberately filtered out there.
    """

    def __init__(self, documents: Iterable[SourcedDocument], *,
                 validate_origins: bool = True):
        docs = tuple(documents)
        by_id: dict[str, SourcedDocument] = {}
        for doc in docs:
            if doc.doc_id in by_id:
                raise ValueError(f"duplicate document id {doc.doc_id!r}")
            by_id[doc.doc_id] = doc
        if validate_origins:
            for doc in docs:
                if doc.origin_id is None:
                    continue
                origin = by_id.get(doc.origin_id)
                if origin is None:
                    raise ValueError(
                        f"document {doc.doc_id!r}: origin_id {doc.origin_id!r} "
                        "does not resolve to any document"
                    )
                if origin.source is not Source.HUMAN:
                    raise ValueError(
                        f"document {doc.doc_id!r}: origin {doc.origin_id!r} "
                        "is not a human document"
                    )
        self._docs = docs
        self._by_id = by_id

    def __len__(self) -> int:
        return len(self._docs)

    def __iter__(self) -> Iterator[SourcedDocument]:
        return iter(self._docs)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._by_id

    def __getitem__(self, doc_id: str) -> SourcedDocument:
        try:
            return self._by_id[doc_id]
        except KeyError:
            raise KeyError(f"unknown document id {doc_id!r}") from None

    @property
    def doc_ids(self) -> tuple[str, ...]:
        return tuple(d.doc_id for d in self._docs)

    def source_of(self, doc_id: str) -> Source:
        return self[doc_id].source

    def source_map(self) -> dict[str, Source]:
        return {d.doc_id: d.source for d in self._docs}

    def subset(self, source: Source) -> "Corpus":
        return Corpus(
            (d for d in self._docs if d.source is source),
            validate_origins=False,
        )


class QrelSet:
    """Graded relevance judgments keyed by (query_id, doc_id)."""

    def __init__(self, entries: Mapping[tuple[str, str], int] | None = None):
        store: dict[tuple[str, str], int] = {}
        order: list[str] = []
        seen: set[str] = set()
        for (qid, did), grade in (entries or {}).items():
            if not qid or not did:
                raise ValueError("qrel query and document ids must be non-empty")
            if not isinstance(grade, int) or isinstance(grade, bool) or grade < 0:
                raise ValueError(
                    f"qrel ({qid!r}, {did!r}): grade must be a non-negative "
                    f"integer, got {grade!r}"
                )
            store[(qid, did)] = grade
            if qid not in seen:
                seen.add(qid)
                order.append(qid)
        self._entries = store
        self._query_order = tuple(order)

    @property
    def entries(self) -> Mapping[tuple[str, str], int]:
        return dict(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: tuple[str, str]) -> bool:
        return key in self._entries

    def grade(self, qid: str, did: str) -> int:
        return self._entries.get((qid, did), 0)

    def query_ids(self) -> tuple[str, ...]:
        """Query ids in first-seen order."""
        return self._query_order

    def grades_for(self, qid: str) -> dict[str, int]:
        return {
            did: g for (q, did), g in self._entries.items() if q == qid
        }

    def union(self, other: "QrelSet") -> "QrelSet":
        """Set-union of judgments; conflicting grades for a key are an error.

        Associative and commutative up to query order, which follows the
        left operand first.
        """
        merged = dict(self._entries)
        for key, grade in other._entries.items():
            if key in merged and merged[key] != grade:
                raise ValueError(
                    f"conflicting grades for {key!r}: "
                    f"{merged[key]} vs {grade}"
                )
            merged[key] = grade
        return QrelSet(merged)

    def validate_against(
        self,
        corpus: Corpus | None = None,
        queries: Sequence[Query] | None = None,
    ) -> None:
        if queries is not None:
            known = {q.query_id for q in queries}
            for qid, did in self._entries:
                if qid not in known:
                    raise ValueError(f"qrel references unknown query {qid!r}")
        if corpus is not None:
            for qid, did in self._entries:
                if did not in corpus:
                    raise ValueError(f"qrel references unknown document {did!r}")


class RunEntry(NamedTuple):
    doc_id: str
    score: float
    rank: int


@dataclass(frozen=True)
class RunList:
    """A ranking for one query: ranks 1..n, scores non-increasing."""

    query_id: str
    entries: tuple[RunEntry, ...]

    def __post_init__(self) -> None:
        if not self.query_id:
            raise ValueError("run query id must be non-empty")
        seen: set[str] = set()
        prev_score = math.inf
        for i, entry in enumerate(self.entries, start=1):
            if entry.rank != i:
                raise ValueError(
                    f"run for {self.query_id!r}: rank {entry.rank} at "
                    f"position {i} (ranks must be contiguous from 1)"
                )
            if not math.isfinite(entry.score):
                raise ValueError(
                    f"run for {self.query_id!r}: non-finite score for "
                    f"{entry.doc_id!r}"
                )
            if entry.score > prev_score:
                raise ValueError(
                    f"run for {self.query_id!r}: score increases at rank {i}"
                )
            if entry.doc_id in seen:
                raise ValueError(
                    f"run for {self.query_id!r}: duplicate document "
                    f"{entry.doc_id!r}"
                )
            seen.add(entry.doc_id)
            prev_score = entry.score

    @staticmethod
    def from_scores(
        query_id: str, scored: Iterable[tuple[str, float]], top_k: int | None = None
    ) -> "RunList":
        """Rank (doc_id, score) pairs by descending score, ascending doc_id."""
        ordered = sorted(scored, key=lambda p: (-p[1], p[0]))
        if top_k is not None:
            ordered = ordered[:top_k]
        entries = tuple(
            RunEntry(doc_id, float(score), rank)
            for rank, (doc_id, score) in enumerate(ordered, start=1)
        )
        return RunList(query_id, entries)

    def doc_ids(self) -> tuple[str, ...]:
        return tuple(e.doc_id for e in self.entries)


@dataclass(frozen=True)
class EmbeddingSet:
    """Dense float64 vectors keyed by id, one dimension per set."""

    dim: int
    vectors: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.dim <= 0:
            raise ValueError("embedding dimension must be positive")
        for key, vec in self.vectors.items():
            if vec.shape != (self.dim,):
                raise ValueError(
                    f"embedding {key!r}: expected dimension {self.dim}, "
                    f"got shape {vec.shape}"
                )
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"embedding {key!r} has non-finite components")

    @staticmethod
    def from_arrays(pairs: Mapping[str, np.ndarray] | Iterable[tuple[str, np.ndarray]]) -> "EmbeddingSet":
        items = pairs.items() if isinstance(pairs, Mapping) else pairs
        vectors: dict[str, np.ndarray] = {}
        dim: int | None = None
        for key, vec in items:
            arr = np.asarray(vec, dtype=np.float64)
            if arr.ndim != 1:
                raise ValueError(f"embedding {key!r} is not a 1-d vector")
            if dim is None:
                dim = int(arr.shape[0])
            if key in vectors:
                raise ValueError(f"duplicate embedding id {key!r}")
            arr = arr.copy()
            arr.setflags(write=False)
            vectors[key] = arr
        if dim is None:
            raise ValueError("embedding set is empty")
        return EmbeddingSet(dim, vectors)

    def __len__(self) -> int:
        return len(self.vectors)

    def __contains__(self, key: str) -> bool:
        return key in self.vectors

    def __getitem__(self, key: str) -> np.ndarray:
        try:
            return self.vectors[key]
        except KeyError:
            raise KeyError(f"no embedding for id {key!r}") from None

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(self.vectors)

    def matrix(self, ids: Sequence[str] | None = None) -> np.ndarray:
        """Rows stacked in the given id order (set order by default)."""
        use = tuple(self.vectors) if ids is None else tuple(ids)
        return np.stack([self[i] for i in use]) if use else np.empty((0, self.dim))


@dataclass(frozen=True)
class TokenLogProbs:
    """Per-token natural log-probabilities for one document."""

    doc_id: str
    logprobs: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.doc_id:
            raise ValueError("log-prob record needs a document id")
        if not self.logprobs:
            raise ValueError(f"log-prob record {self.doc_id!r} is empty")
        for i, lp in enumerate(self.logprobs):
            if not math.isfinite(lp) or lp > 0.0:
                raise ValueError(
                    f"log-prob record {self.doc_id!r}: value {lp!r} at "
                    f"index {i} must be finite and <= 0"
                )

    @property
    def token_count(self) -> int:
        return len(self.logprobs)


def _iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(path, line_no, f"invalid JSON ({exc.msg})") from None
            if not isinstance(record, dict):
                raise FormatError(path, line_no, "record is not a JSON object")
            yield line_no, record


def _require(record: dict, key: str, path: str | Path, line_no: int) -> object:
    if key not in record:
        raise FormatError(path, line_no, f"missing field {key!r}")
    return record[key]


def _require_str(record: dict, key: str, path: str | Path, line_no: int) -> str:
    value = _require(record, key, path, line_no)
    if not isinstance(value, str):
        raise FormatError(path, line_no, f"field {key!r} must be a string")
    return value


def load_corpus(path: str | Path) -> Corpus:
    """Load a corpus JSONL file, preserving file order."""
    docs: list[SourcedDocument] = []
    for line_no, record in _iter_jsonl(path):
        doc_id = _require_str(record, "_id", path, line_no)
        title = record.get("title", "")
        if not isinstance(title, str):
            raise FormatError(path, line_no, "field 'title' must be a string")
        text = _require_str(record, "text", path, line_no)
        raw_source = _require_str(record, "source", path, line_no)
        try:
            source = Source(raw_source)
        except ValueError:
            raise FormatError(
                path, line_no,
                f"unknown source {raw_source!r} (expected 'human' or 'generated')",
            ) from None
        model_tag = record.get("model")
        origin_id = record.get("origin_id")
        if model_tag is not None and not isinstance(model_tag, str):
            raise FormatError(path, line_no, "field 'model' must be a string")
        if origin_id is not None and not isinstance(origin_id, str):
            raise FormatError(path, line_no, "field 'origin_id' must be a string")
        try:
            docs.append(
                SourcedDocument(doc_id, title, text, source, model_tag, origin_id)
            )
        except ValueError as exc:
            raise FormatError(path, line_no, str(exc)) from None
    try:
        return Corpus(docs)
    except ValueError as exc:
        raise FormatError(path, None, str(exc)) from None


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for doc in corpus:
            record: dict[str, object] = {
                "_id": doc.doc_id,
                "title": doc.title,
                "text": doc.text,
                "source": doc.source.value,
            }
            if doc.model_tag is not None:
                record["model"] = doc.model_tag
            if doc.origin_id is not None:
                record["origin_id"] = doc.origin_id
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_queries(path: str | Path) -> list[Query]:
    queries: list[Query] = []
    seen: set[str] = set()
    for line_no, record in _iter_jsonl(path):
        qid = _require_str(record, "_id", path, line_no)
        text = _require_str(record, "text", path, line_no)
        if qid in seen:
            raise FormatError(path, line_no, f"duplicate query id {qid!r}")
        seen.add(qid)
        try:
            queries.append(Query(qid, text))
        except ValueError as exc:
            raise FormatError(path, line_no, str(exc)) from None
    return queries


def write_queries(queries: Sequence[Query], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for query in queries:
            handle.write(
                json.dumps({"_id": query.query_id, "text": query.text},
                           ensure_ascii=False) + "\n"
            )


def load_qrels(path: str | Path) -> QrelSet:
    """Load TSV qrels; both 3-column and 4-column TREC layouts accepted."""
    entries: dict[tuple[str, str], int] = {}
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) == 1:
                parts = line.split()
            if len(parts) == 3:
                qid, did, raw_grade = parts
            elif len(parts) == 4:
                qid, _, did, raw_grade = parts
            else:
                raise FormatError(
                    path, line_no,
                    f"expected 3 or 4 columns, got {len(parts)}",
                )
            qid = qid.strip()
            did = did.strip()
            try:
                grade = int(raw_grade)
            except ValueError:
                raise FormatError(
                    path, line_no, f"grade {raw_grade!r} is not an integer"
                ) from None
            if grade < 0:
                raise FormatError(path, line_no, f"negative grade {grade}")
            if not qid or not did:
                raise FormatError(path, line_no, "empty query or document id")
            key = (qid, did)
            if key in entries:
                raise FormatError(
                    path, line_no, f"duplicate judgment for {key!r}"
                )
            entries[key] = grade
    return QrelSet(entries)


def write_qrels(qrels: QrelSet, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for (qid, did), grade in qrels.entries.items():
            handle.write(f"{qid}\t{did}\t{grade}\n")


def load_embeddings(path: str | Path) -> EmbeddingSet:
    """Load an embeddings JSONL file; dimension is fixed by the first row."""
    vectors: dict[str, np.ndarray] = {}
    dim: int | None = None
    for line_no, record in _iter_jsonl(path):
        key = _require_str(record, "_id", path, line_no)
        raw = _require(record, "vector", path, line_no)
        if not isinstance(raw, list) or not raw:
            raise FormatError(path, line_no, "field 'vector' must be a non-empty array")
        try:
            vec = np.asarray(raw, dtype=np.float64)
        except (TypeError, ValueError):
            raise FormatError(path, line_no, "field 'vector' must be numeric") from None
        if vec.ndim != 1:
            raise FormatError(path, line_no, "field 'vector' must be flat")
        if dim is None:
            dim = int(vec.shape[0])
        elif vec.shape[0] != dim:
            raise FormatError(
                path, line_no,
                f"vector for {key!r} has dimension {vec.shape[0]}, expected {dim}",
            )
        if not np.all(np.isfinite(vec)):
            raise FormatError(path, line_no, f"vector for {key!r} has non-finite values")
        if key in vectors:
            raise FormatError(path, line_no, f"duplicate embedding id {key!r}")
        vec.setflags(write=False)
        vectors[key] = vec
    if dim is None:
        raise FormatError(path, None, "embedding file is empty")
    return EmbeddingSet(dim, vectors)


def write_embeddings(embeddings: EmbeddingSet, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for key in embeddings.ids:
            vec = embeddings[key]
            components = ", ".join(fmt17(v) for v in vec)
            handle.write(
                '{"_id": %s, "vector": [%s]}\n' % (json.dumps(key, ensure_ascii=False), components)
            )


def load_logprobs(path: str | Path) -> dict[str, TokenLogProbs]:
    records: dict[str, TokenLogProbs] = {}
    for line_no, record in _iter_jsonl(path):
        doc_id = _require_str(record, "_id", path, line_no)
        raw = _require(record, "logprobs", path, line_no)
        if not isinstance(raw, list) or not raw:
            raise FormatError(
                path, line_no, "field 'logprobs' must be a non-empty array"
            )
        values: list[float] = []
        for i, item in enumerate(raw):
            if isinstance(item, bool) or not isinstance(item, (int, float)):
                raise FormatError(
                    path, line_no, f"logprobs[{i}] must be a number"
                )
            values.append(float(item))
        if doc_id in records:
            raise FormatError(path, line_no, f"duplicate log-prob id {doc_id!r}")
        try:
            records[doc_id] = TokenLogProbs(doc_id, tuple(values))
        except ValueError as exc:
            raise FormatError(path, line_no, str(exc)) from None
    return records


def write_logprobs(records: Mapping[str, TokenLogProbs] | Iterable[TokenLogProbs],
                   path: str | Path) -> None:
    items = records.values() if isinstance(records, Mapping) else records
    with open(path, "w", encoding="utf-8") as handle:
        for rec in items:
            values = ", ".join(fmt17(v) for v in rec.logprobs)
            handle.write(
                '{"_id": %s, "logprobs": [%s]}\n'
                % (json.dumps(rec.doc_id, ensure_ascii=False), values)
            )


def load_run(path: str | Path) -> list[RunList]:
    """Load a six-column run file into one RunList per query (file order)."""
    per_query: dict[str, list[RunEntry]] = {}
    seen_pairs: set[tuple[str, str]] = set()
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 6:
                raise FormatError(
                    path, line_no, f"expected 6 columns, got {len(parts)}"
                )
            qid, _q0, did, raw_rank, raw_score, _tag = parts
            try:
                rank = int(raw_rank)
            except ValueError:
                raise FormatError(
                    path, line_no, f"rank {raw_rank!r} is not an integer"
                ) from None
            try:
                score = float(raw_score)
            except ValueError:
                raise FormatError(
                    path, line_no, f"score {raw_score!r} is not a number"
                ) from None
            if (qid, did) in seen_pairs:
                raise FormatError(
                    path, line_no, f"duplicate entry for query {qid!r}, doc {did!r}"
                )
            seen_pairs.add((qid, did))
            rows = per_query.setdefault(qid, [])
            expected = len(rows) + 1
            if rank != expected:
                raise FormatError(
                    path, line_no,
                    f"query {qid!r}: rank {rank} out of order (expected {expected})",
                )
            rows.append(RunEntry(did, score, rank))
    runs: list[RunList] = []
    for qid, rows in per_query.items():
        try:
            runs.append(RunList(qid, tuple(rows)))
        except ValueError as exc:
            raise FormatError(path, None, str(exc)) from None
    return runs


def write_run(runs: Sequence[RunList], path: str | Path, tag: str = "sourcebias") -> None:
    if not tag or any(ch.isspace() for ch in tag):
        raise ValueError(f"run tag {tag!r} must be a single non-empty token")
    seen: set[str] = set()
    for run in runs:
        if run.query_id in seen:
            raise ValueError(f"duplicate run for query {run.query_id!r}")
        seen.add(run.query_id)
    with open(path, "w", encoding="utf-8") as handle:
        for run in runs:
            for entry in run.entries:
                handle.write(
                    f"{run.query_id} Q0 {entry.doc_id} {entry.rank} "
                    f"{fmt17(entry.score)} {tag}\n"
                )
