"""Read and write the JSONL file formats shared with the sourcebias toolkit.

The adapter talks to that toolkit exclusively through files, so this module
re-implements the small subset of formats it touches rather than importing
the toolkit: document corpora are read, and embeddings, per-token
log-probabilities, and raw rewrite texts are written.  Output floats go
through ``json.dumps`` unmodified (Python serializes floats with shortest
round-trip repr, so values survive a read-back exactly).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np


class FormatError(ValueError):
    """A malformed input file; rendered as ``path:line: message``."""

    def __init__(self, path: str | Path, line_no: int | None, message: str):
        self.path = str(path)
        self.line_no = line_no
        location = self.path if line_no is None else f"{self.path}:{line_no}"
        super().__init__(f"{location}: {message}")


@dataclass(frozen=True)
class InputDocument:
    """One corpus record as the adapter sees it: id, optional title, text."""

    doc_id: str
    title: str
    text: str

    @property
    def full_text(self) -> str:
        return f"{self.title} {self.text}" if self.title else self.text


def _iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(path, line_no, f"invalid JSON ({exc.msg})") from None
            if not isinstance(record, dict):
                raise FormatError(path, line_no, "each line must be a JSON object")
            yield line_no, record


def _require_str(record: dict, key: str, path: str | Path, line_no: int) -> str:
    value = record.get(key)
    if not isinstance(value, str) or not value:
        raise FormatError(path, line_no, f"field {key!r} must be a non-empty string")
    return value


def read_documents(path: str | Path) -> list[InputDocument]:
    """Load corpus records in file order; ids must be unique, text non-empty.

    Extra keys (source, model, origin_id, ...) are accepted and ignored, so
    both plain human corpora and mixed benchmark corpora are valid inputs.
    """
    docs: list[InputDocument] = []
    seen: set[str] = set()
    for line_no, record in _iter_jsonl(path):
        doc_id = _require_str(record, "_id", path, line_no)
        text = _require_str(record, "text", path, line_no)
        title = record.get("title", "")
        if not isinstance(title, str):
            raise FormatError(path, line_no, "field 'title' must be a string")
        if doc_id in seen:
            raise FormatError(path, line_no, f"duplicate document id {doc_id!r}")
        seen.add(doc_id)
        docs.append(InputDocument(doc_id, title, text))
    if not docs:
        raise FormatError(path, None, "corpus contains no documents")
    return docs


def write_embeddings(rows: Sequence[tuple[str, np.ndarray]], path: str | Path) -> None:
    """Write ``{"_id": ..., "vector": [...]}`` lines, one per document."""
    with open(path, "w", encoding="utf-8") as handle:
        for doc_id, vector in rows:
            record = {"_id": doc_id, "vector": [float(v) for v in vector]}
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")


def write_logprobs(rows: Sequence[tuple[str, Sequence[float]]], path: str | Path) -> None:
    """Write ``{"_id": ..., "logprobs": [...]}`` lines, one per document."""
    with open(path, "w", encoding="utf-8") as handle:
        for doc_id, logprobs in rows:
            record = {"_id": doc_id, "logprobs": [float(v) for v in logprobs]}
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")


def write_rewrites(rows: Sequence[tuple[str, str]], path: str | Path) -> None:
    """Write raw rewrite texts as ``{"_id": origin id, "text": ...}`` lines.

    Responses are stored exactly as returned — boilerplate cleanup belongs
    to the benchmark builder, not the producer.
    """
    with open(path, "w", encoding="utf-8") as handle:
        for origin_id, text in rows:
            record = {"_id": origin_id, "text": text}
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")


def write_requests(rows: Sequence[tuple[str, Mapping[str, object]]], path: str | Path) -> None:
    """Write the request bodies a rewrite run would send (offline mode)."""
    with open(path, "w", encoding="utf-8") as handle:
        for origin_id, body in rows:
            record = {"_id": origin_id, "request": dict(body)}
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")
