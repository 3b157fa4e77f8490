"""Independent reference implementations used as test oracles.

Everything here is deliberately written in the most literal way possible —
explicit loops, textbook formulas, no code shared with the package under
test — so that agreement between the two routes is meaningful evidence.
"""

from __future__ import annotations

import math
from typing import Mapping, Sequence


def mask_grades(
    grades: Mapping[str, int],
    source_of: Mapping[str, str],
    target: str,
) -> dict[str, int]:
    """Force every positive whose source != target to grade 0."""
    return {
        doc: (grade if source_of[doc] == target else 0)
        for doc, grade in grades.items()
    }


def dcg_reference(ranking: Sequence[str], grades: Mapping[str, int], k: int) -> float:
    total = 0.0
    for position, doc in enumerate(ranking[:k], start=1):
        gain = grades.get(doc, 0)
        total += gain / math.log2(position + 1)
    return total


def ndcg_reference(ranking: Sequence[str], grades: Mapping[str, int], k: int) -> float:
    """NDCG@k with linear gain; the ideal ranking uses every graded positive,
    retrieved or not, and a query with no positives scores 0."""
    positives = sorted((g for g in grades.values() if g > 0), reverse=True)
    if not positives:
        return 0.0
    ideal = 0.0
    for position, gain in enumerate(positives[:k], start=1):
        ideal += gain / math.log2(position + 1)
    return dcg_reference(ranking, grades, k) / ideal


def map_reference(ranking: Sequence[str], grades: Mapping[str, int], k: int) -> float:
    """AP@k normalized by the total number of positives (binary relevance)."""
    total_relevant = sum(1 for g in grades.values() if g > 0)
    if total_relevant == 0:
        return 0.0
    hits = 0
    score = 0.0
    for position, doc in enumerate(ranking[:k], start=1):
        if grades.get(doc, 0) > 0:
            hits += 1
            score += hits / position
    return score / total_relevant


def bm25_reference(
    doc_tokens: Sequence[Sequence[str]],
    query_terms: Sequence[str],
    doc_idx: int,
    k1: float = 1.2,
    b: float = 0.75,
) -> float:
    """Okapi BM25 from the textbook formula, one term occurrence at a time."""
    n_docs = len(doc_tokens)
    avgdl = sum(len(toks) for toks in doc_tokens) / n_docs
    doc = list(doc_tokens[doc_idx])
    dl = len(doc)
    score = 0.0
    for term in query_terms:
        df = sum(1 for toks in doc_tokens if term in toks)
        idf = math.log((n_docs - df + 0.5) / (df + 0.5) + 1.0)
        tf = doc.count(term)
        score += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl))
    return score


def tfidf_reference(
    doc_tokens: Sequence[Sequence[str]],
    query_terms: Sequence[str],
    doc_idx: int,
) -> float:
    """Cosine-style TF-IDF: smoothed idf, L2-normalized document vector,
    raw-count query weights."""
    n_docs = len(doc_tokens)

    def idf(term: str) -> float:
        df = sum(1 for toks in doc_tokens if term in toks)
        return math.log((n_docs + 1) / (df + 1)) + 1.0

    doc = list(doc_tokens[doc_idx])
    vocab = sorted(set(doc))
    weights = {t: doc.count(t) * idf(t) for t in vocab}
    norm = math.sqrt(sum(w * w for w in weights.values()))
    if norm == 0.0:
        return 0.0
    score = 0.0
    for term in sorted(set(query_terms)):
        q_weight = list(query_terms).count(term) * idf(term)
        score += q_weight * weights.get(term, 0.0) / norm
    return score


def infonce_reference(positive: float, candidates: Sequence[float]) -> float:
    """−log softmax(positive | candidates); candidates include the positive."""
    shift = max(candidates)
    denom = sum(math.exp(s - shift) for s in candidates)
    return -((positive - shift) - math.log(denom))


def ppl_reference(logprobs: Sequence[float]) -> float:
    """Log-perplexity via the exponentiate-multiply-relog route."""
    probability = 1.0
    for lp in logprobs:
        probability *= math.exp(lp)
    return -math.log(probability) / len(logprobs)


def kl_reference(p: Sequence[float], q: Sequence[float]) -> float:
    total = 0.0
    for pi, qi in zip(p, q):
        total += pi * math.log(pi / qi)
    return total
