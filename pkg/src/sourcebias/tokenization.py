"""Shared tokenization used by term statistics and the lexical index."""

from __future__ import annotations


def tokenize(text: str) -> list[str]:
    """Lowercase and split on any non-alphanumeric character.

    Unicode-aware, no stemming, no stopwords; empty tokens are dropped.
    Underscores count as separators.
    """
    tokens: list[str] = []
    current: list[str] = []
    for ch in text.lower():
        if ch.isalnum():
            current.append(ch)
        elif current:
            tokens.append("".join(current))
            current = []
    if current:
        tokens.append("".join(current))
    return tokens


def whitespace_token_count(text: str) -> int:
    """Token count under plain whitespace splitting (document-length stats)."""
    return len(text.split())
