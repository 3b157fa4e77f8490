"""Tokenization for the built-in (model-free) producers.

Lowercased runs of alphanumeric characters, Unicode-aware, with
underscores treated as separators — the same word shape the consuming
toolkit indexes, implemented independently here so the adapter stays
import-free of it.
"""

from __future__ import annotations

import re

_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())
