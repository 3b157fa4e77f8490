"""Command-line entry point: ``sourcebias-adapter <task> ...``.

Three producer tasks (embed, pseudo-ppl, rewrite) that each read a corpus
JSONL and write one output file plus a ``<output>.manifest.json`` recording
the package version, input hashes, and every parameter — including decoding
defaults, which are deliberately pinned here rather than left implicit.
Manifests carry no timestamps, so identical invocations are byte-identical.

Exit codes: 0 success; 1 for anticipated errors (bad usage, malformed
input, unavailable model, missing credentials); 2 with a traceback for
anything unexpected.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import traceback
from pathlib import Path
from typing import Callable, Mapping, Sequence

from . import __version__
from .embedder import HASH_MODEL, make_embedder
from .errors import AdapterError
from .formats import (
    FormatError,
    read_documents,
    write_embeddings,
    write_logprobs,
    write_requests,
    write_rewrites,
)
from .rewriter import (
    DEFAULT_PROMPT_TEMPLATE,
    RewriteClient,
    RewriteSettings,
    api_key_from_env,
    base_url_from_env,
    build_requests,
    prompt_id_for,
)
from .scorer import BIGRAM_MODEL, make_scorer


def _sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_json(path: str | Path, payload: object) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def _check_outputs_distinct(
    inputs: Mapping[str, str | Path], outputs: Mapping[str, str | Path]
) -> None:
    """Refuse to overwrite an input: tasks must not mutate them."""
    resolved_inputs = {Path(p).resolve() for p in inputs.values()}
    for label, out in outputs.items():
        if Path(out).resolve() in resolved_inputs:
            raise ValueError(
                f"output --{label} {out} would overwrite an input file"
            )


def _write_manifest(
    subcommand: str,
    inputs: Mapping[str, str | Path],
    outputs: Mapping[str, str | Path],
    parameters: Mapping[str, object],
    anchor: str | Path,
) -> None:
    manifest = {
        "schema_version": 1,
        "subcommand": subcommand,
        "version": __version__,
        "seed": None,
        "inputs": {
            label: {"path": str(path), "sha256": _sha256(path)}
            for label, path in inputs.items()
        },
        "outputs": {label: str(path) for label, path in outputs.items()},
        "parameters": dict(parameters),
    }
    anchor = Path(anchor)
    _write_json(anchor.with_name(anchor.name + ".manifest.json"), manifest)


def _diagnostic(args: argparse.Namespace, message: str) -> None:
    if not args.quiet:
        print(message, file=sys.stderr)


def _logger(args: argparse.Namespace) -> Callable[[str], None]:
    return lambda message: _diagnostic(args, message)


def _cmd_embed(args: argparse.Namespace) -> None:
    inputs = {"corpus": args.corpus}
    outputs = {"output": args.output}
    _check_outputs_distinct(inputs, outputs)
    docs = read_documents(args.corpus)
    embedder = make_embedder(
        args.model, dim=args.dim, max_length=args.max_length,
        batch_size=args.batch_size, log=_logger(args),
    )
    matrix = embedder.embed_documents(docs)
    write_embeddings(
        [(doc.doc_id, row) for doc, row in zip(docs, matrix)], args.output
    )
    _diagnostic(args, f"embedded {len(docs)} documents at dim {embedder.dim}")
    _write_manifest(
        "embed", inputs, outputs,
        {
            "model": embedder.model_id,
            "dim": embedder.dim,
            "batch_size": args.batch_size,
            "max_length": args.max_length,
        },
        args.output,
    )


def _cmd_pseudo_ppl(args: argparse.Namespace) -> None:
    inputs = {"corpus": args.corpus}
    outputs = {"output": args.output}
    _check_outputs_distinct(inputs, outputs)
    docs = read_documents(args.corpus)
    scorer = make_scorer(
        args.model, smoothing=args.smoothing, max_length=args.max_length,
        batch_size=args.batch_size, log=_logger(args),
    )
    scorer.fit(docs)
    rows = scorer.score_documents(docs)
    if not rows:
        raise ValueError("no documents could be scored (all token-less)")
    write_logprobs(rows, args.output)
    _diagnostic(
        args, f"scored {len(rows)} of {len(docs)} documents"
    )
    _write_manifest(
        "pseudo-ppl", inputs, outputs,
        {
            "model": scorer.model_id,
            "smoothing": args.smoothing,
            "batch_size": args.batch_size,
            "max_length": args.max_length,
            "scored_count": len(rows),
            "skipped_count": len(docs) - len(rows),
        },
        args.output,
    )


def _make_client(settings: RewriteSettings, api_key: str,
                 base_url: str) -> RewriteClient:
    """Seam for tests to inject a mock transport."""
    return RewriteClient(settings, api_key, base_url)


def _cmd_rewrite(args: argparse.Namespace) -> None:
    inputs = {"corpus": args.corpus}
    outputs = {"output": args.output}
    _check_outputs_distinct(inputs, outputs)
    docs = read_documents(args.corpus)
    settings = RewriteSettings(
        model=args.model,
        prompt_template=args.prompt,
        temperature=args.temperature,
        max_tokens=args.max_length,
        concurrency=args.concurrency,
        max_retries=args.max_retries,
        backoff_seconds=args.backoff,
    )
    parameters: dict[str, object] = {
        "model": settings.model,
        "prompt_template": settings.prompt_template,
        "prompt_id": prompt_id_for(settings.prompt_template),
        "temperature": settings.temperature,
        "max_tokens": settings.max_tokens,
        "batch_size": args.batch_size,
        "concurrency": settings.concurrency,
        "max_retries": settings.max_retries,
        "dry_run": args.dry_run,
    }

    if args.dry_run:
        rows = build_requests(docs, settings)
        write_requests(rows, args.output)
        _diagnostic(args, f"dry run: wrote {len(rows)} request bodies")
        parameters.update({"base_url": None, "request_count": len(rows)})
        _write_manifest("rewrite", inputs, outputs, parameters, args.output)
        return

    api_key = api_key_from_env()
    base_url = base_url_from_env()
    with _make_client(settings, api_key, base_url) as client:
        outcome = client.rewrite_all(
            docs, batch_size=args.batch_size, log=_logger(args)
        )
    if not outcome.rewrites:
        raise AdapterError(f"all {len(docs)} rewrite requests failed")
    write_rewrites(outcome.rewrites, args.output)
    if outcome.failures:
        skipped_path = Path(args.output).with_name(
            Path(args.output).name + ".skipped.json"
        )
        _write_json(
            skipped_path,
            [{"_id": f.doc_id, "error": f.error} for f in outcome.failures],
        )
        outputs = {**outputs, "skipped": skipped_path}
        _diagnostic(
            args,
            f"skipped {len(outcome.failures)} documents after retries "
            f"(see {skipped_path})",
        )
    _diagnostic(
        args,
        f"rewrote {len(outcome.rewrites)} of {len(docs)} documents "
        f"({outcome.request_count} requests)",
    )
    parameters.update({
        "base_url": base_url,
        "request_count": outcome.request_count,
        "failure_count": len(outcome.failures),
    })
    _write_manifest("rewrite", inputs, outputs, parameters, args.output)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--quiet", action="store_true",
                        help="suppress progress diagnostics (not errors)")

    parser = argparse.ArgumentParser(
        prog="sourcebias-adapter",
        description="produce embeddings, token log-probabilities, or LLM "
                    "rewrites in sourcebias file formats",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand")

    p = sub.add_parser("embed", parents=[common],
                       help="one embedding vector per document")
    p.add_argument("--corpus", required=True, help="corpus JSONL to embed")
    p.add_argument("--model", default=HASH_MODEL,
                   help=f"{HASH_MODEL!r} or a transformers path/hub id")
    p.add_argument("--dim", type=int, default=256,
                   help=f"vector width ({HASH_MODEL} only)")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--max-length", type=int, default=256,
                   help="truncate documents beyond this many tokens")
    p.add_argument("--output", required=True, help="embeddings JSONL")
    p.set_defaults(handler=_cmd_embed)

    p = sub.add_parser("pseudo-ppl", parents=[common],
                       help="per-token conditional log-probabilities")
    p.add_argument("--corpus", required=True, help="corpus JSONL to score")
    p.add_argument("--model", default=BIGRAM_MODEL,
                   help=f"{BIGRAM_MODEL!r} or a transformers masked-LM "
                        "path/hub id")
    p.add_argument("--smoothing", type=float, default=0.5,
                   help=f"add-k smoothing ({BIGRAM_MODEL} only)")
    p.add_argument("--batch-size", type=int, default=32,
                   help="masked positions per forward pass")
    p.add_argument("--max-length", type=int, default=256,
                   help="truncate documents beyond this many tokens")
    p.add_argument("--output", required=True, help="log-probs JSONL")
    p.set_defaults(handler=_cmd_pseudo_ppl)

    p = sub.add_parser("rewrite", parents=[common],
                       help="rewrite each document via a chat-completions API")
    p.add_argument("--corpus", required=True, help="corpus JSONL to rewrite")
    p.add_argument("--model", required=True,
                   help="completion model identifier sent to the API")
    p.add_argument("--prompt", default=DEFAULT_PROMPT_TEMPLATE,
                   help="prompt template with a {text} placeholder")
    p.add_argument("--batch-size", type=int, default=32,
                   help="documents submitted per batch")
    p.add_argument("--concurrency", type=int, default=1,
                   help="maximum requests in flight")
    p.add_argument("--max-length", type=int, default=512,
                   help="maximum tokens in each generated rewrite")
    p.add_argument("--temperature", type=float, default=0.7)
    p.add_argument("--max-retries", type=int, default=3)
    p.add_argument("--backoff", type=float, default=1.0,
                   help="base seconds for exponential retry backoff")
    p.add_argument("--dry-run", action="store_true",
                   help="write request bodies without sending anything")
    p.add_argument("--output", required=True,
                   help="raw rewrites JSONL (request bodies under --dry-run)")
    p.set_defaults(handler=_cmd_rewrite)

    return parser


def dispatch(argv: Sequence[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
    except SystemExit as exc:
        # argparse prints usage itself; fold its exit codes into ours.
        return 0 if exc.code == 0 else 1
    handler = getattr(args, "handler", None)
    if handler is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        handler(args)
    except (FormatError, OSError, ValueError, AdapterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2
    return 0


def main() -> int:
    return dispatch(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
