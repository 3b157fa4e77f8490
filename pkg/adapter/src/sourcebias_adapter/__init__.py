"""Model-ecosystem bridge for source-bias benchmarks.

Produces document embeddings, masked-LM per-token log-probabilities, and
raw LLM rewrites, all written in the file formats the sourcebias toolkit
consumes.  The adapter is a pure producer: it computes no metrics and is
never imported by that toolkit."""

from .embedder import HASH_MODEL, HashingEmbedder, TransformerEmbedder, make_embedder
from .errors import AdapterError
from .formats import (
    FormatError,
    InputDocument,
    read_documents,
    write_embeddings,
    write_logprobs,
    write_requests,
    write_rewrites,
)
from .rewriter import (
    DEFAULT_PROMPT_TEMPLATE,
    RewriteClient,
    RewriteOutcome,
    RewriteSettings,
    build_requests,
    prompt_id_for,
    render_prompt,
)
from .scorer import (
    BIGRAM_MODEL,
    BigramMaskedScorer,
    TransformerMaskedScorer,
    make_scorer,
)
from .textproc import tokenize

__version__ = "0.1.0"

__all__ = [
    "AdapterError",
    "BIGRAM_MODEL",
    "BigramMaskedScorer",
    "DEFAULT_PROMPT_TEMPLATE",
    "FormatError",
    "HASH_MODEL",
    "HashingEmbedder",
    "InputDocument",
    "RewriteClient",
    "RewriteOutcome",
    "RewriteSettings",
    "TransformerEmbedder",
    "TransformerMaskedScorer",
    "build_requests",
    "make_embedder",
    "make_scorer",
    "prompt_id_for",
    "read_documents",
    "render_prompt",
    "tokenize",
    "write_embeddings",
    "write_logprobs",
    "write_requests",
    "write_rewrites",
    "__version__",
]
