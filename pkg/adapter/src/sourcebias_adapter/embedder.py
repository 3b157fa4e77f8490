"""Document embedding producers.

Two backends share one interface:

- ``hash-v1`` — a dependency-free feature-hashing embedder.  Each token is
  hashed (SHA-256) to a coordinate and a sign, term counts are accumulated,
  and the vector is L2-normalized.  Deterministic across processes and
  platforms; duplicate documents map to identical vectors by construction.
- any other model identifier — loaded through ``transformers`` as a local
  path or hub id; embeddings are the attention-masked mean of the final
  hidden states, L2-normalized.

Both truncate to ``max_length`` tokens and report per-document truncation
through the optional ``log`` callback.
"""

from __future__ import annotations

import hashlib
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import AdapterError
from .formats import InputDocument
from .textproc import tokenize

HASH_MODEL = "hash-v1"

Logger = Callable[[str], None]


def _silent(_: str) -> None:
    return None


class Embedder(Protocol):
    model_id: str
    dim: int

    def embed_documents(self, docs: Sequence[InputDocument]) -> np.ndarray: ...


class HashingEmbedder:
    """Feature-hashing text embedder (signed token counts, L2-normalized)."""

    def __init__(self, dim: int = 256, max_length: int = 256,
                 log: Logger = _silent):
        if dim < 2:
            raise ValueError(f"embedding dim must be >= 2, got {dim}")
        if max_length < 1:
            raise ValueError(f"max length must be >= 1, got {max_length}")
        self.model_id = HASH_MODEL
        self.dim = dim
        self.max_length = max_length
        self._log = log

    def _vector(self, doc: InputDocument) -> np.ndarray:
        tokens = tokenize(doc.full_text)
        if len(tokens) > self.max_length:
            self._log(
                f"truncating {doc.doc_id!r}: {len(tokens)} tokens "
                f"-> {self.max_length}"
            )
            tokens = tokens[: self.max_length]
        vector = np.zeros(self.dim, dtype=np.float64)
        for token in tokens:
            digest = hashlib.sha256(token.encode("utf-8")).digest()
            index = int.from_bytes(digest[:8], "big") % self.dim
            sign = 1.0 if digest[8] & 1 else -1.0
            vector[index] += sign
        norm = float(np.linalg.norm(vector))
        if norm == 0.0:
            # Token-less or fully sign-cancelled text still gets a valid
            # unit vector so downstream cosine scoring never sees a zero.
            self._log(f"document {doc.doc_id!r} hashed to zero; using fallback")
            return np.full(self.dim, 1.0 / np.sqrt(self.dim))
        return vector / norm

    def embed_documents(self, docs: Sequence[InputDocument]) -> np.ndarray:
        return np.stack([self._vector(doc) for doc in docs])


class TransformerEmbedder:
    """Mean-pooled, L2-normalized embeddings from a transformers model."""

    def __init__(self, model_id: str, max_length: int = 256,
                 batch_size: int = 32, log: Logger = _silent):
        if max_length < 1:
            raise ValueError(f"max length must be >= 1, got {max_length}")
        if batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {batch_size}")
        try:
            import torch
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise AdapterError(
                f"model {model_id!r} needs the transformers backend; "
                f"install the 'transformers' extra ({exc})"
            ) from None
        try:
            self._tokenizer = AutoTokenizer.from_pretrained(model_id)
            self._model = AutoModel.from_pretrained(model_id)
        except (OSError, ValueError) as exc:
            raise AdapterError(f"failed to load model {model_id!r}: {exc}") from None
        self._torch = torch
        self._model.eval()
        self.model_id = model_id
        self.dim = int(self._model.config.hidden_size)
        self.max_length = max_length
        self.batch_size = batch_size
        self._log = log

    def _report_truncation(self, docs: Sequence[InputDocument]) -> None:
        for doc in docs:
            n_tokens = len(self._tokenizer(doc.full_text)["input_ids"])
            if n_tokens > self.max_length:
                self._log(
                    f"truncating {doc.doc_id!r}: {n_tokens} tokens "
                    f"-> {self.max_length}"
                )

    def embed_documents(self, docs: Sequence[InputDocument]) -> np.ndarray:
        self._report_truncation(docs)
        chunks: list[np.ndarray] = []
        with self._torch.no_grad():
            for start in range(0, len(docs), self.batch_size):
                batch = docs[start: start + self.batch_size]
                encoded = self._tokenizer(
                    [doc.full_text for doc in batch],
                    padding=True,
                    truncation=True,
                    max_length=self.max_length,
                    return_tensors="pt",
                )
                hidden = self._model(**encoded).last_hidden_state
                mask = encoded["attention_mask"].unsqueeze(-1).to(hidden.dtype)
                pooled = (hidden * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1)
                chunks.append(pooled.double().numpy())
        matrix = np.concatenate(chunks, axis=0)
        norms = np.linalg.norm(matrix, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        return matrix / norms


def make_embedder(model_id: str, dim: int, max_length: int,
                  batch_size: int, log: Logger = _silent) -> Embedder:
    if model_id == HASH_MODEL:
        return HashingEmbedder(dim=dim, max_length=max_length, log=log)
    return TransformerEmbedder(
        model_id, max_length=max_length, batch_size=batch_size, log=log
    )
