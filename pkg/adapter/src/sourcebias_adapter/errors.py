"""Errors shared across the adapter."""

from __future__ import annotations


class AdapterError(RuntimeError):
    """An anticipated failure (model unavailable, missing credentials, ...)
    that the CLI reports as a one-line error rather than a traceback."""
