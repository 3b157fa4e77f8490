"""Build a mixed human/generated corpus from rewrites of human documents.

Generated documents are paired with the human document they were rewritten
from via ``origin_id`` and get ids of the form ``<origin_id>@<model_tag>``.
Relevance labels transfer: every judgment for a human document is copied to
its generated counterpart, under the assumption that a faithful rewrite
preserves topical relevance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from sourcebias.store import Corpus, EmbeddingSet, QrelSet, Source, SourcedDocument
from sourcebias.tokenization import tokenize, whitespace_token_count

# Leading boilerplate lines emitted by chat models, e.g.
# "Sure, here's a possible rewrite of the text:".
DEFAULT_CLEANUP_PATTERNS: tuple[str, ...] = ("Sure, here", "Here is", "Here's")


@dataclass(frozen=True)
class BuildConfig:
    model_tag: str
    cleanup_patterns: tuple[str, ...] = DEFAULT_CLEANUP_PATTERNS
    prompt_id: str | None = None

    def __post_init__(self) -> None:
        if not self.model_tag or any(ch.isspace() for ch in self.model_tag):
            raise ValueError(
                f"model tag {self.model_tag!r} must be a non-empty token"
            )
        for pattern in self.cleanup_patterns:
            if not pattern:
                raise ValueError("cleanup patterns must be non-empty")


def clean_generated(raw: str, patterns: Sequence[str] = DEFAULT_CLEANUP_PATTERNS) -> str:
    """Strip leading chat boilerplate from a raw model rewrite.

    While the first non-empty line starts with one of the literal patterns,
    that line is dropped; the remainder is whitespace-trimmed.  Text whose
    first line matches nothing is returned unchanged, which makes the
    function idempotent.  Raises if nothing but boilerplate remains.
    """
    lines = raw.split("\n")
    start = 0
    stripped_any = False
    while start < len(lines):
        line = lines[start]
        if not line.strip():
            start += 1
            continue
        if any(line.lstrip().startswith(p) for p in patterns):
            start += 1
            stripped_any = True
            continue
        break
    if not stripped_any:
        return raw
    cleaned = "\n".join(lines[start:]).strip()
    if not cleaned:
        raise ValueError("generated text is empty after boilerplate cleanup")
    return cleaned


def build_benchmark(
    human: Corpus,
    generated_texts: Mapping[str, str],
    qrels: QrelSet,
    cfg: BuildConfig,
) -> tuple[Corpus, QrelSet]:
    """Merge human documents with cleaned rewrites and transfer labels.

    ``generated_texts`` maps a human document id to the raw rewrite of that
    document.  Returns the mixed corpus (human documents first, in corpus
    order) and the extended qrel set.
    """
    for doc in human:
        if doc.source is not Source.HUMAN:
            raise ValueError(
                f"base corpus must be all human; {doc.doc_id!r} is "
                f"{doc.source.value}"
            )
    for origin_id in generated_texts:
        if origin_id not in human:
            raise ValueError(
                f"generated text references unknown human document {origin_id!r}"
            )

    docs: list[SourcedDocument] = list(human)
    for doc in human:
        raw = generated_texts.get(doc.doc_id)
        if raw is None:
            continue
        text = clean_generated(raw, cfg.cleanup_patterns)
        gen_id = f"{doc.doc_id}@{cfg.model_tag}"
        if gen_id in human:
            raise ValueError(
                f"generated id {gen_id!r} collides with a human document id"
            )
        docs.append(
            SourcedDocument(
                doc_id=gen_id,
                title=doc.title,
                text=text,
                source=Source.GENERATED,
                model_tag=cfg.model_tag,
                origin_id=doc.doc_id,
            )
        )
    mixed = Corpus(docs)

    extended: dict[tuple[str, str], int] = {}
    for (qid, did), grade in qrels.entries.items():
        extended[(qid, did)] = grade
        if did in generated_texts:
            extended[(qid, f"{did}@{cfg.model_tag}")] = grade
    return mixed, QrelSet(extended)


def jaccard_overlap(generated_text: str, human_text: str) -> tuple[float, float]:
    """Term-set Jaccard similarity and overlap coefficient for one pair."""
    gen_terms = set(tokenize(generated_text))
    hum_terms = set(tokenize(human_text))
    if not hum_terms:
        raise ValueError("human document has an empty term set")
    if not gen_terms:
        raise ValueError("generated document has an empty term set")
    common = len(gen_terms & hum_terms)
    jaccard = common / len(gen_terms | hum_terms)
    overlap = common / min(len(gen_terms), len(hum_terms))
    return jaccard, overlap


@dataclass(frozen=True)
class Histogram:
    lo: float
    hi: float
    counts: tuple[int, ...]

    def to_dict(self) -> dict:
        edges = np.linspace(self.lo, self.hi, len(self.counts) + 1)
        return {
            "bin_edges": [float(e) for e in edges],
            "counts": list(self.counts),
        }


def histogram(values: Sequence[float], lo: float, hi: float, bins: int = 20) -> Histogram:
    counts, _ = np.histogram(np.asarray(values, dtype=np.float64),
                             bins=bins, range=(lo, hi))
    return Histogram(lo, hi, tuple(int(c) for c in counts))


@dataclass(frozen=True)
class PairStats:
    generated_id: str
    human_id: str
    jaccard: float
    overlap: float
    cosine: float | None


@dataclass(frozen=True)
class CorpusStats:
    human_doc_count: int
    generated_doc_count: int
    human_avg_len: float
    generated_avg_len: float
    pairs: tuple[PairStats, ...]
    jaccard_mean: float
    overlap_mean: float
    cosine_mean: float | None
    jaccard_hist: Histogram
    overlap_hist: Histogram
    cosine_hist: Histogram | None

    def to_json_dict(self) -> dict:
        out: dict[str, object] = {
            "human_doc_count": self.human_doc_count,
            "generated_doc_count": self.generated_doc_count,
            "pair_count": len(self.pairs),
            "human_avg_len": self.human_avg_len,
            "generated_avg_len": self.generated_avg_len,
            "jaccard_mean": self.jaccard_mean,
            "overlap_mean": self.overlap_mean,
            "jaccard_hist": self.jaccard_hist.to_dict(),
            "overlap_hist": self.overlap_hist.to_dict(),
        }
        if self.cosine_mean is not None and self.cosine_hist is not None:
            out["cosine_mean"] = self.cosine_mean
            out["cosine_hist"] = self.cosine_hist.to_dict()
        return out

    def per_pair_rows(self) -> list[list[str]]:
        """Header plus one CSV row per pair, generated-corpus order."""
        has_cos = any(p.cosine is not None for p in self.pairs)
        header = ["generated_id", "human_id", "jaccard", "overlap"]
        if has_cos:
            header.append("cosine")
        rows = [header]
        for p in self.pairs:
            row = [p.generated_id, p.human_id, f"{p.jaccard:.6f}", f"{p.overlap:.6f}"]
            if has_cos:
                row.append("" if p.cosine is None else f"{p.cosine:.6f}")
            rows.append(row)
        return rows


def corpus_stats(
    human: Corpus,
    generated: Corpus,
    embeddings: EmbeddingSet | None = None,
) -> CorpusStats:
    """Similarity and length statistics over origin-paired documents.

    Every generated document must resolve to a human document via its
    ``origin_id``.  When embeddings are given they must cover both sides
    of every pair; per-pair cosine similarity is reported then.
    """
    pairs: list[PairStats] = []
    for gen_doc in generated:
        if gen_doc.source is not Source.GENERATED:
            raise ValueError(
                f"document {gen_doc.doc_id!r} in generated corpus is not generated"
            )
        assert gen_doc.origin_id is not None
        if gen_doc.origin_id not in human:
            raise ValueError(
                f"generated document {gen_doc.doc_id!r}: origin "
                f"{gen_doc.origin_id!r} not in human corpus"
            )
        hum_doc = human[gen_doc.origin_id]
        jac, ovl = jaccard_overlap(gen_doc.text, hum_doc.text)
        cosine: float | None = None
        if embeddings is not None:
            for needed in (gen_doc.doc_id, hum_doc.doc_id):
                if needed not in embeddings:
                    raise ValueError(f"no embedding for document {needed!r}")
            a = embeddings[gen_doc.doc_id]
            b = embeddings[hum_doc.doc_id]
            denom = float(np.linalg.norm(a) * np.linalg.norm(b))
            if denom == 0.0:
                raise ValueError(
                    f"zero-norm embedding in pair ({gen_doc.doc_id!r}, "
                    f"{hum_doc.doc_id!r})"
                )
            cosine = float(np.dot(a, b) / denom)
        pairs.append(PairStats(gen_doc.doc_id, hum_doc.doc_id, jac, ovl, cosine))
    if not pairs:
        raise ValueError("no origin-paired documents to compare")

    jaccards = [p.jaccard for p in pairs]
    overlaps = [p.overlap for p in pairs]
    cosines = [p.cosine for p in pairs if p.cosine is not None]
    with_cos = embeddings is not None

    def avg_len(corpus: Corpus) -> float:
        return float(
            np.mean([whitespace_token_count(d.text) for d in corpus])
        )

    return CorpusStats(
        human_doc_count=len(human),
        generated_doc_count=len(generated),
        human_avg_len=avg_len(human),
        generated_avg_len=avg_len(generated),
        pairs=tuple(pairs),
        jaccard_mean=float(np.mean(jaccards)),
        overlap_mean=float(np.mean(overlaps)),
        cosine_mean=float(np.mean(cosines)) if with_cos else None,
        jaccard_hist=histogram(jaccards, 0.0, 1.0),
        overlap_hist=histogram(overlaps, 0.0, 1.0),
        cosine_hist=histogram(cosines, -1.0, 1.0) if with_cos else None,
    )
