"""Per-token conditional log-probability producers (pseudo-perplexity).

For every kept token position ``s`` the producers emit
``log P_model(token_s | context)`` where the context is everything except
the token itself:

- ``bigram-v1`` — a corpus-fitted, add-k-smoothed bigram field.  The
  masked slot is scored by its exact conditional under the model's Markov
  factorization: ``P(t | prev, next) ∝ P(t | prev) · P(next | t)``,
  normalized over the candidate vocabulary.  Self-contained and fully
  deterministic; intended for desk-scale corpora (the transition table is
  dense, so vocabularies are capped).
- any other model identifier — a ``transformers`` masked-LM checkpoint;
  each position is replaced by the mask token and scored from the model's
  log-softmax at that position, batched ``batch_size`` positions per
  forward pass.

Documents that tokenize to zero tokens are skipped with a warning, never
emitted as empty records.
"""

from __future__ import annotations

from typing import Protocol, Sequence

import numpy as np

from .embedder import Logger, _silent
from .errors import AdapterError
from .formats import InputDocument
from .textproc import tokenize

BIGRAM_MODEL = "bigram-v1"
_MAX_DENSE_VOCAB = 5000


class MaskedScorer(Protocol):
    model_id: str

    def fit(self, docs: Sequence[InputDocument]) -> None: ...

    def score_documents(
        self, docs: Sequence[InputDocument]
    ) -> list[tuple[str, list[float]]]: ...


class BigramMaskedScorer:
    """Masked scoring under an add-k bigram model fitted on a corpus."""

    def __init__(self, smoothing: float = 0.5, max_length: int = 256,
                 log: Logger = _silent):
        if smoothing <= 0.0:
            raise ValueError(f"smoothing must be positive, got {smoothing}")
        if max_length < 1:
            raise ValueError(f"max length must be >= 1, got {max_length}")
        self.model_id = BIGRAM_MODEL
        self.smoothing = smoothing
        self.max_length = max_length
        self._log = log
        self._token_ids: dict[str, int] | None = None
        self._forward: np.ndarray | None = None

    def _doc_tokens(self, doc: InputDocument) -> list[str]:
        tokens = tokenize(doc.full_text)
        if len(tokens) > self.max_length:
            self._log(
                f"truncating {doc.doc_id!r}: {len(tokens)} tokens "
                f"-> {self.max_length}"
            )
            tokens = tokens[: self.max_length]
        return tokens

    def fit(self, docs: Sequence[InputDocument]) -> None:
        """Count transitions over the corpus (with start/end sentinels) and
        freeze the smoothed forward table P(next | current)."""
        per_doc = [self._doc_tokens(doc) for doc in docs]
        vocab = sorted({t for tokens in per_doc for t in tokens})
        if len(vocab) > _MAX_DENSE_VOCAB:
            raise AdapterError(
                f"bigram model caps the vocabulary at {_MAX_DENSE_VOCAB} "
                f"types (corpus has {len(vocab)}); use a transformers model"
            )
        token_ids = {token: i for i, token in enumerate(vocab)}
        n = len(vocab)
        unk, bos, eos = n, n + 1, n + 1  # unk is a candidate; bos row, eos col
        counts = np.zeros((n + 2, n + 2), dtype=np.float64)
        for tokens in per_doc:
            previous = bos
            for token in tokens:
                current = token_ids[token]
                counts[previous, current] += 1.0
                previous = current
            if tokens:
                counts[previous, eos] += 1.0
        smoothed = counts + self.smoothing
        self._token_ids = token_ids
        self._forward = smoothed / smoothed.sum(axis=1, keepdims=True)
        self._unk, self._bos, self._eos = unk, bos, eos

    def score_tokens(self, tokens: Sequence[str]) -> list[float] | None:
        """Log-probability of each token given both neighbors; None if empty.

        Tokens outside the fitted vocabulary fall back to an unknown-word
        type that carries only smoothing mass.
        """
        if self._forward is None or self._token_ids is None:
            raise RuntimeError("scorer must be fitted before scoring")
        if not tokens:
            return None
        forward = self._forward
        candidates = np.arange(self._unk + 1)  # all token types plus unk
        ids = [self._token_ids.get(t, self._unk) for t in tokens]
        logprobs: list[float] = []
        for s, token_id in enumerate(ids):
            previous = ids[s - 1] if s > 0 else self._bos
            following = ids[s + 1] if s + 1 < len(ids) else self._eos
            weights = forward[previous, candidates] * forward[candidates, following]
            probability = weights[token_id] / weights.sum()
            logprobs.append(min(float(np.log(probability)), 0.0))
        return logprobs

    def score_documents(
        self, docs: Sequence[InputDocument]
    ) -> list[tuple[str, list[float]]]:
        rows: list[tuple[str, list[float]]] = []
        for doc in docs:
            scored = self.score_tokens(self._doc_tokens(doc))
            if scored is None:
                self._log(f"skipping {doc.doc_id!r}: no tokens to score")
                continue
            rows.append((doc.doc_id, scored))
        return rows


class TransformerMaskedScorer:
    """Masked-LM scoring: mask one position at a time, batched forwards."""

    def __init__(self, model_id: str, max_length: int = 256,
                 batch_size: int = 32, log: Logger = _silent):
        if max_length < 1:
            raise ValueError(f"max length must be >= 1, got {max_length}")
        if batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {batch_size}")
        try:
            import torch
            from transformers import AutoModelForMaskedLM, AutoTokenizer
        except ImportError as exc:
            raise AdapterError(
                f"model {model_id!r} needs the transformers backend; "
                f"install the 'transformers' extra ({exc})"
            ) from None
        try:
            self._tokenizer = AutoTokenizer.from_pretrained(model_id)
            self._model = AutoModelForMaskedLM.from_pretrained(model_id)
        except (OSError, ValueError) as exc:
            raise AdapterError(f"failed to load model {model_id!r}: {exc}") from None
        if self._tokenizer.mask_token_id is None:
            raise AdapterError(
                f"model {model_id!r} has no mask token; a masked-LM "
                "checkpoint is required for pseudo-perplexity"
            )
        self._torch = torch
        self._model.eval()
        self.model_id = model_id
        self.max_length = max_length
        self.batch_size = batch_size
        self._log = log

    def fit(self, docs: Sequence[InputDocument]) -> None:
        """Pretrained checkpoints need no corpus fitting."""

    def _score_one(self, doc: InputDocument) -> list[float] | None:
        torch = self._torch
        encoded = self._tokenizer(
            doc.full_text,
            truncation=True,
            max_length=self.max_length,
            return_special_tokens_mask=True,
        )
        input_ids = encoded["input_ids"]
        positions = [
            i for i, special in enumerate(encoded["special_tokens_mask"])
            if not special
        ]
        if not positions:
            return None
        base = torch.tensor(input_ids, dtype=torch.long)
        logprobs: list[float] = []
        with torch.no_grad():
            for start in range(0, len(positions), self.batch_size):
                chunk = positions[start: start + self.batch_size]
                batch = base.repeat(len(chunk), 1)
                for row, position in enumerate(chunk):
                    batch[row, position] = self._tokenizer.mask_token_id
                logits = self._model(input_ids=batch).logits
                scores = torch.log_softmax(logits, dim=-1)
                for row, position in enumerate(chunk):
                    value = float(scores[row, position, input_ids[position]])
                    logprobs.append(min(value, 0.0))
        return logprobs

    def score_documents(
        self, docs: Sequence[InputDocument]
    ) -> list[tuple[str, list[float]]]:
        rows: list[tuple[str, list[float]]] = []
        for doc in docs:
            scored = self._score_one(doc)
            if scored is None:
                self._log(f"skipping {doc.doc_id!r}: no tokens to score")
                continue
            rows.append((doc.doc_id, scored))
        return rows


def make_scorer(model_id: str, smoothing: float, max_length: int,
                batch_size: int, log: Logger = _silent) -> MaskedScorer:
    if model_id == BIGRAM_MODEL:
        return BigramMaskedScorer(
            smoothing=smoothing, max_length=max_length, log=log
        )
    return TransformerMaskedScorer(
        model_id, max_length=max_length, batch_size=batch_size, log=log
    )
