"""Tools for building mixed human/LLM retrieval benchmarks and measuring
how retrieval systems favour one document source over the other."""

from sourcebias.store import (
    Corpus,
    EmbeddingSet,
    FormatError,
    Query,
    QrelSet,
    RunList,
    Source,
    SourcedDocument,
    TokenLogProbs,
)

__version__ = "0.1.0"

__all__ = [
    "Corpus",
    "EmbeddingSet",
    "FormatError",
    "Query",
    "QrelSet",
    "RunList",
    "Source",
    "SourcedDocument",
    "TokenLogProbs",
    "__version__",
]
