"""Lexical (TF-IDF, BM25) and dense retrieval over a mixed corpus.

Dense search is exhaustive over precomputed embeddings; no approximate
indexing, so identical inputs always produce identical run files.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Protocol, Sequence

import numpy as np

from sourcebias.store import Corpus, EmbeddingSet, Query, RunList
from sourcebias.tokenization import tokenize


class LexicalIndex:
    """Inverted index with lexicographic term ids.

    Documents are indexed over title and body text with the shared
    tokenizer.  ``doc_lengths`` counts index tokens; ``avgdl`` is their
    mean and must be positive (an all-empty corpus is rejected).
    """

    def __init__(self, corpus: Corpus):
        if len(corpus) == 0:
            raise ValueError("cannot index an empty corpus")
        self.doc_ids: tuple[str, ...] = corpus.doc_ids
        self._doc_index = {did: i for i, did in enumerate(self.doc_ids)}
        term_freqs: list[Counter[str]] = []
        for doc in corpus:
            content = f"{doc.title} {doc.text}" if doc.title else doc.text
            term_freqs.append(Counter(tokenize(content)))
        self.doc_lengths = np.array(
            [sum(tf.values()) for tf in term_freqs], dtype=np.float64
        )
        self.doc_count = len(self.doc_ids)
        self.avgdl = float(self.doc_lengths.mean())
        if self.avgdl == 0.0:
            raise ValueError("corpus documents are all empty after tokenization")

        vocab = sorted(set().union(*term_freqs)) if term_freqs else []
        self.vocabulary: dict[str, int] = {t: i for i, t in enumerate(vocab)}
        postings: dict[int, list[tuple[int, int]]] = {
            tid: [] for tid in self.vocabulary.values()
        }
        for doc_idx, tf in enumerate(term_freqs):
            for term, count in tf.items():
                postings[self.vocabulary[term]].append((doc_idx, count))
        # Built in ascending doc order, so each posting list is sorted.
        self.postings: dict[int, tuple[tuple[int, int], ...]] = {
            tid: tuple(rows) for tid, rows in postings.items()
        }
        self.df: dict[int, int] = {
            tid: len(rows) for tid, rows in self.postings.items()
        }
        self._term_freqs = term_freqs

    def doc_internal_id(self, doc_id: str) -> int:
        try:
            return self._doc_index[doc_id]
        except KeyError:
            raise KeyError(f"document {doc_id!r} is not in the index") from None

    def term_frequency(self, term: str, doc_id: str) -> int:
        return self._term_freqs[self.doc_internal_id(doc_id)].get(term, 0)

    def document_frequency(self, term: str) -> int:
        tid = self.vocabulary.get(term)
        return 0 if tid is None else self.df[tid]


def build_index(corpus: Corpus) -> LexicalIndex:
    return LexicalIndex(corpus)


def _bm25_idf(n_docs: int, df: int) -> float:
    # +1 inside the log keeps idf >= 0 even for df > N/2.
    return math.log((n_docs - df + 0.5) / (df + 0.5) + 1.0)


def _tfidf_idf(n_docs: int, df: int) -> float:
    return math.log((n_docs + 1.0) / (df + 1.0)) + 1.0


def bm25_score(
    index: LexicalIndex,
    query_terms: Sequence[str],
    doc_id: str,
    k1: float = 1.2,
    b: float = 0.75,
) -> float:
    """Okapi BM25 for one document.

    score = Σ_t idf(t) · tf·(k1+1) / (tf + k1·(1 − b + b·len/avgdl)) with
    idf(t) = ln((N − df + 0.5)/(df + 0.5) + 1).  Terms repeated in the
    query contribute once per occurrence; unknown terms contribute 0.
    """
    if k1 < 0:
        raise ValueError(f"k1 must be >= 0, got {k1}")
    if not 0.0 <= b <= 1.0:
        raise ValueError(f"b must be in [0, 1], got {b}")
    doc_idx = index.doc_internal_id(doc_id)
    tf_map = index._term_freqs[doc_idx]
    length_norm = 1.0 - b + b * index.doc_lengths[doc_idx] / index.avgdl
    score = 0.0
    for term in query_terms:
        tf = tf_map.get(term, 0)
        if tf == 0:
            continue
        idf = _bm25_idf(index.doc_count, index.document_frequency(term))
        score += idf * tf * (k1 + 1.0) / (tf + k1 * length_norm)
    return score


def tfidf_score(index: LexicalIndex, query_terms: Sequence[str], doc_id: str) -> float:
    """TF-IDF dot product: L2-normalized doc vector vs. raw query weights.

    w(t,d) = tf·idf with idf(t) = ln((N+1)/(df+1)) + 1; query weights are
    query term counts times idf.
    """
    doc_idx = index.doc_internal_id(doc_id)
    tf_map = index._term_freqs[doc_idx]
    if not tf_map:
        return 0.0
    norm_sq = 0.0
    for term, tf in tf_map.items():
        w = tf * _tfidf_idf(index.doc_count, index.document_frequency(term))
        norm_sq += w * w
    norm = math.sqrt(norm_sq)
    if norm == 0.0:
        return 0.0
    score = 0.0
    for term, q_count in Counter(query_terms).items():
        tf = tf_map.get(term, 0)
        if tf == 0:
            continue
        idf = _tfidf_idf(index.doc_count, index.document_frequency(term))
        score += (q_count * idf) * (tf * idf / norm)
    return score


class Scorer(Protocol):
    def score_query(self, query: Query) -> Iterable[tuple[str, float]]: ...


@dataclass(frozen=True)
class Bm25Scorer:
    index: LexicalIndex
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self) -> None:
        if self.k1 < 0:
            raise ValueError(f"k1 must be >= 0, got {self.k1}")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError(f"b must be in [0, 1], got {self.b}")

    def score_query(self, query: Query) -> Iterable[tuple[str, float]]:
        index = self.index
        scores = np.zeros(index.doc_count)
        length_norm = 1.0 - self.b + self.b * index.doc_lengths / index.avgdl
        for term in tokenize(query.text):
            tid = index.vocabulary.get(term)
            if tid is None:
                continue
            idf = _bm25_idf(index.doc_count, index.df[tid])
            for doc_idx, tf in index.postings[tid]:
                scores[doc_idx] += (
                    idf * tf * (self.k1 + 1.0)
                    / (tf + self.k1 * length_norm[doc_idx])
                )
        return zip(index.doc_ids, scores.tolist())


class TfidfScorer:
    def __init__(self, index: LexicalIndex):
        self.index = index
        norms = np.zeros(index.doc_count)
        for tid, rows in index.postings.items():
            idf = _tfidf_idf(index.doc_count, index.df[tid])
            for doc_idx, tf in rows:
                norms[doc_idx] += (tf * idf) ** 2
        self._doc_norms = np.sqrt(norms)

    def score_query(self, query: Query) -> Iterable[tuple[str, float]]:
        index = self.index
        scores = np.zeros(index.doc_count)
        for term, q_count in Counter(tokenize(query.text)).items():
            tid = index.vocabulary.get(term)
            if tid is None:
                continue
            idf = _tfidf_idf(index.doc_count, index.df[tid])
            for doc_idx, tf in index.postings[tid]:
                scores[doc_idx] += (q_count * idf) * (tf * idf)
        nonzero = self._doc_norms > 0.0
        scores[nonzero] /= self._doc_norms[nonzero]
        return zip(index.doc_ids, scores.tolist())


class DenseScorer:
    """Exhaustive dot/cosine scoring over precomputed embeddings."""

    def __init__(
        self,
        doc_embeddings: EmbeddingSet,
        query_embeddings: EmbeddingSet,
        similarity: str = "cosine",
    ):
        if similarity not in ("dot", "cosine"):
            raise ValueError(f"unknown similarity {similarity!r}")
        if doc_embeddings.dim != query_embeddings.dim:
            raise ValueError(
                f"document dim {doc_embeddings.dim} != query dim "
                f"{query_embeddings.dim}"
            )
        self.similarity = similarity
        self.doc_ids = doc_embeddings.ids
        self.query_embeddings = query_embeddings
        self._matrix = doc_embeddings.matrix()
        if similarity == "cosine":
            norms = np.linalg.norm(self._matrix, axis=1)
            if np.any(norms == 0.0):
                bad = self.doc_ids[int(np.argmin(norms))]
                raise ValueError(
                    f"document {bad!r} has a zero-norm embedding; cosine undefined"
                )
            self._matrix = self._matrix / norms[:, None]

    def score_query(self, query: Query) -> Iterable[tuple[str, float]]:
        if query.query_id not in self.query_embeddings:
            raise KeyError(f"no embedding for query {query.query_id!r}")
        vec = self.query_embeddings[query.query_id]
        if self.similarity == "cosine":
            norm = float(np.linalg.norm(vec))
            if norm == 0.0:
                raise ValueError(
                    f"query {query.query_id!r} has a zero-norm embedding"
                )
            vec = vec / norm
        scores = self._matrix @ vec
        return zip(self.doc_ids, scores.tolist())


def search(scorer: Scorer, queries: Sequence[Query], top_k: int = 100) -> list[RunList]:
    """Rank every document for every query; ties broken by ascending doc id."""
    if top_k < 1:
        raise ValueError(f"top_k must be >= 1, got {top_k}")
    runs = []
    for query in queries:
        runs.append(RunList.from_scores(query.query_id, scorer.score_query(query), top_k))
    return runs
