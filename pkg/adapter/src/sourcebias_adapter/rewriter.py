"""Batch LLM rewriting through an OpenAI-compatible chat-completions API.

Requests are built from a prompt template (default: the verbatim rewrite
instruction), submitted in input-order batches with bounded concurrency,
retried with exponential backoff on transient failures, and stored raw —
cleanup of chat boilerplate is deliberately left to the benchmark builder.

Credentials come only from the environment:

- ``SOURCEBIAS_ADAPTER_API_KEY`` (or ``OPENAI_API_KEY``) — bearer token.
- ``SOURCEBIAS_ADAPTER_BASE_URL`` (or ``OPENAI_BASE_URL``) — endpoint,
  defaulting to ``https://api.openai.com/v1``.

Offline mode (``dry_run``) renders every request body without opening a
connection, so it needs no credentials.
"""

from __future__ import annotations

import hashlib
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import httpx

from .errors import AdapterError
from .formats import InputDocument

DEFAULT_PROMPT_TEMPLATE = "Please rewrite the following text: {text}"
DEFAULT_BASE_URL = "https://api.openai.com/v1"
_KEY_VARS = ("SOURCEBIAS_ADAPTER_API_KEY", "OPENAI_API_KEY")
_URL_VARS = ("SOURCEBIAS_ADAPTER_BASE_URL", "OPENAI_BASE_URL")
_RETRY_STATUSES = frozenset({429, 500, 502, 503, 504})


def render_prompt(template: str, text: str) -> str:
    """Substitute the document into the template's ``{text}`` placeholder."""
    if "{text}" not in template:
        raise ValueError("prompt template must contain a {text} placeholder")
    return template.replace("{text}", text)


def prompt_id_for(template: str) -> str:
    """Stable identifier recorded with outputs built from this template."""
    if template == DEFAULT_PROMPT_TEMPLATE:
        return "default"
    return hashlib.sha256(template.encode("utf-8")).hexdigest()[:12]


def api_key_from_env(env: Mapping[str, str] = os.environ) -> str:
    for name in _KEY_VARS:
        value = env.get(name)
        if value:
            return value
    raise AdapterError(
        "no API key found; set " + " or ".join(_KEY_VARS)
    )


def base_url_from_env(env: Mapping[str, str] = os.environ) -> str:
    for name in _URL_VARS:
        value = env.get(name)
        if value:
            return value.rstrip("/")
    return DEFAULT_BASE_URL


@dataclass(frozen=True)
class RewriteSettings:
    model: str
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE
    temperature: float = 0.7
    max_tokens: int = 512
    concurrency: int = 1
    max_retries: int = 3
    backoff_seconds: float = 1.0

    def __post_init__(self) -> None:
        if not self.model:
            raise ValueError("rewrite needs a model identifier")
        if "{text}" not in self.prompt_template:
            raise ValueError("prompt template must contain a {text} placeholder")
        if self.concurrency < 1:
            raise ValueError(f"concurrency must be >= 1, got {self.concurrency}")
        if self.max_retries < 0:
            raise ValueError(f"max retries must be >= 0, got {self.max_retries}")
        if self.backoff_seconds < 0.0:
            raise ValueError("backoff must be >= 0 seconds")

    def request_body(self, text: str) -> dict:
        return {
            "model": self.model,
            "messages": [
                {"role": "user",
                 "content": render_prompt(self.prompt_template, text)},
            ],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }


def build_requests(
    docs: Sequence[InputDocument], settings: RewriteSettings
) -> list[tuple[str, dict]]:
    """The exact request bodies a live run would send, in input order."""
    return [(doc.doc_id, settings.request_body(doc.text)) for doc in docs]


@dataclass(frozen=True)
class RewriteFailure:
    doc_id: str
    error: str


@dataclass
class RewriteOutcome:
    """Successful rewrites in input order plus a record of skipped docs."""

    rewrites: list[tuple[str, str]] = field(default_factory=list)
    failures: list[RewriteFailure] = field(default_factory=list)
    request_count: int = 0


class RewriteClient:
    """Thin chat-completions client with retry, backoff, and concurrency.

    ``transport`` is injectable for tests; ``sleep`` likewise, so backoff
    schedules are assertable without waiting.
    """

    def __init__(
        self,
        settings: RewriteSettings,
        api_key: str,
        base_url: str,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
        timeout: float = 60.0,
    ):
        self._settings = settings
        self._sleep = sleep
        self._client = httpx.Client(
            base_url=base_url,
            headers={"Authorization": f"Bearer {api_key}"},
            timeout=timeout,
            transport=transport,
        )
        self._requests_sent = 0

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "RewriteClient":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()

    def _delay_for(self, attempt: int, response: httpx.Response | None) -> float:
        if response is not None:
            retry_after = response.headers.get("Retry-After")
            if retry_after is not None:
                try:
                    return min(float(retry_after), 60.0)
                except ValueError:
                    pass
        return self._settings.backoff_seconds * (2.0 ** attempt)

    def _rewrite_one(self, doc: InputDocument) -> str:
        body = self._settings.request_body(doc.text)
        last_error = "no attempts made"
        for attempt in range(self._settings.max_retries + 1):
            response = None
            try:
                self._requests_sent += 1
                response = self._client.post("/chat/completions", json=body)
            except httpx.HTTPError as exc:
                last_error = f"transport error: {exc}"
            else:
                if response.status_code == 200:
                    try:
                        payload = response.json()
                        return payload["choices"][0]["message"]["content"]
                    except (ValueError, KeyError, IndexError, TypeError):
                        last_error = "malformed completion payload"
                elif response.status_code in _RETRY_STATUSES:
                    last_error = f"HTTP {response.status_code}"
                else:
                    raise AdapterError(
                        f"rewrite of {doc.doc_id!r} rejected: "
                        f"HTTP {response.status_code}"
                    )
            if attempt < self._settings.max_retries:
                self._sleep(self._delay_for(attempt, response))
        raise _Exhausted(last_error)

    def rewrite_all(
        self,
        docs: Sequence[InputDocument],
        batch_size: int = 32,
        log: Callable[[str], None] = lambda _: None,
    ) -> RewriteOutcome:
        """Rewrite every document, ``batch_size`` at a time, with at most
        ``settings.concurrency`` requests in flight; output keeps input
        order and documents whose retries are exhausted are skipped with a
        failure record rather than aborting the run."""
        outcome = RewriteOutcome()
        workers = max(1, min(self._settings.concurrency, batch_size))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for start in range(0, len(docs), batch_size):
                batch = docs[start: start + batch_size]
                futures = [pool.submit(self._rewrite_one, doc) for doc in batch]
                for doc, future in zip(batch, futures):
                    try:
                        text = future.result()
                    except _Exhausted as exc:
                        log(f"skipping {doc.doc_id!r}: {exc}")
                        outcome.failures.append(RewriteFailure(doc.doc_id, str(exc)))
                    else:
                        log(f"rewrote {doc.doc_id!r}")
                        outcome.rewrites.append((doc.doc_id, text))
        outcome.request_count = self._requests_sent
        return outcome


class _Exhausted(Exception):
    """Retries used up for one document; the document is skipped."""
