"""Command-line entry point composing the library into reproducible runs.

Every subcommand reads declared input files, writes declared output files,
and drops a ``<output>.manifest.json`` next to its primary output listing
the subcommand, package version, SHA-256 digest of each input, the
effective seed, and all parameters.  Manifests carry no timestamps, so a
re-run with identical inputs and seed is byte-identical.  Human-oriented
diagnostics go to standard error only.

Exit codes: 0 on success, 1 on any input problem (bad flags, missing or
malformed files, invalid parameter combinations), 2 on unexpected
internal failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import statistics
import sys
import traceback
from pathlib import Path
from typing import Mapping, Sequence

from sourcebias import __version__
from sourcebias.builder import (
    DEFAULT_CLEANUP_PATTERNS,
    BuildConfig,
    build_benchmark,
    corpus_stats,
)
from sourcebias.compression import (
    compare_spectra,
    perplexity,
    ppl_summary,
    singular_values,
)
from sourcebias.debias import (
    DivergenceError,
    TrainConfig,
    alpha_sweep,
    best_alpha,
    load_triplets,
    train,
    write_head,
)
from sourcebias.evaluation import evaluate_runs
from sourcebias.pplbound import (
    GenerationError,
    TheoremInstance,
    check_conditions,
    sample_instance,
    verify_proof_chain,
    verify_theorem,
)
from sourcebias.retrieval import (
    Bm25Scorer,
    DenseScorer,
    TfidfScorer,
    build_index,
    search,
)
from sourcebias.store import (
    FormatError,
    Source,
    load_corpus,
    load_embeddings,
    load_logprobs,
    load_qrels,
    load_queries,
    load_run,
    write_corpus,
    write_qrels,
    write_run,
    _iter_jsonl,
    _require_str,
)

import numpy as np


def _info(args: argparse.Namespace, message: str) -> None:
    if not args.quiet:
        print(message, file=sys.stderr)


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
    """Refuse to overwrite an input: subcommands must not mutate them."""
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
    seed: int | None,
    anchor: str | Path,
) -> None:
    manifest = {
        "schema_version": 1,
        "subcommand": subcommand,
        "version": __version__,
        "seed": seed,
        "inputs": {
            label: {"path": str(path), "sha256": _sha256(path)}
            for label, path in inputs.items()
        },
        "outputs": {label: str(path) for label, path in outputs.items()},
        "parameters": dict(parameters),
    }
    anchor = Path(anchor)
    _write_json(anchor.with_name(anchor.name + ".manifest.json"), manifest)


def _parse_int_list(text: str, flag: str) -> tuple[int, ...]:
    try:
        values = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise ValueError(f"{flag} expects comma-separated integers, got {text!r}") from None
    if not values:
        raise ValueError(f"{flag} must name at least one value")
    return values


def _parse_float_list(text: str, flag: str) -> tuple[float, ...]:
    try:
        values = tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise ValueError(f"{flag} expects comma-separated reals, got {text!r}") from None
    if not values:
        raise ValueError(f"{flag} must name at least one value")
    return values


def _load_generated_texts(path: str | Path) -> dict[str, str]:
    """JSONL of {"_id": origin document id, "text": raw rewrite}."""
    texts: dict[str, str] = {}
    for line_no, record in _iter_jsonl(path):
        origin_id = _require_str(record, "_id", path, line_no)
        text = _require_str(record, "text", path, line_no)
        if origin_id in texts:
            raise FormatError(path, line_no, f"duplicate origin id {origin_id!r}")
        texts[origin_id] = text
    return texts


# ---------------------------------------------------------------- handlers


def _cmd_build(args: argparse.Namespace) -> None:
    inputs = {
        "human-corpus": args.human_corpus,
        "generated": args.generated,
        "qrels": args.qrels,
    }
    outputs = {"output-corpus": args.output_corpus, "output-qrels": args.output_qrels}
    _check_outputs_distinct(inputs, outputs)

    patterns = tuple(args.cleanup_pattern) if args.cleanup_pattern else DEFAULT_CLEANUP_PATTERNS
    cfg = BuildConfig(
        model_tag=args.model_tag,
        cleanup_patterns=patterns,
        prompt_id=args.prompt_id,
    )
    human = load_corpus(args.human_corpus)
    texts = _load_generated_texts(args.generated)
    qrels = load_qrels(args.qrels)
    mixed, mixed_qrels = build_benchmark(human, texts, qrels, cfg)
    write_corpus(mixed, args.output_corpus)
    write_qrels(mixed_qrels, args.output_qrels)
    _write_manifest(
        "build", inputs, outputs,
        {
            "model_tag": args.model_tag,
            "cleanup_patterns": list(patterns),
            "prompt_id": args.prompt_id,
        },
        seed=None, anchor=args.output_corpus,
    )
    _info(args, f"built mixed corpus: {len(mixed)} documents -> {args.output_corpus}")


def _cmd_stats(args: argparse.Namespace) -> None:
    inputs: dict[str, str] = {"corpus": args.corpus}
    if args.embeddings:
        inputs["embeddings"] = args.embeddings
    outputs: dict[str, str] = {"output": args.output}
    if args.per_pair_csv:
        outputs["per-pair-csv"] = args.per_pair_csv
    _check_outputs_distinct(inputs, outputs)

    corpus = load_corpus(args.corpus)
    embeddings = load_embeddings(args.embeddings) if args.embeddings else None
    stats = corpus_stats(
        corpus.subset(Source.HUMAN), corpus.subset(Source.GENERATED), embeddings
    )
    _write_json(args.output, stats.to_json_dict())
    if args.per_pair_csv:
        with open(args.per_pair_csv, "w", encoding="utf-8", newline="") as handle:
            csv.writer(handle).writerows(stats.per_pair_rows())
    _write_manifest("stats", inputs, outputs, {}, seed=None, anchor=args.output)
    _info(args, f"{len(stats.pairs)} document pairs -> {args.output}")


def _cmd_index(args: argparse.Namespace) -> None:
    inputs = {"corpus": args.corpus}
    outputs = {"output": args.output}
    _check_outputs_distinct(inputs, outputs)

    index = build_index(load_corpus(args.corpus))
    by_df = sorted(
        index.vocabulary, key=lambda term: (-index.df[index.vocabulary[term]], term)
    )
    summary = {
        "schema_version": 1,
        "doc_count": index.doc_count,
        "avgdl": index.avgdl,
        "vocabulary_size": len(index.vocabulary),
        "postings_total": sum(len(rows) for rows in index.postings.values()),
        "top_terms": [
            [term, index.df[index.vocabulary[term]]] for term in by_df[:20]
        ],
    }
    _write_json(args.output, summary)
    _write_manifest("index", inputs, outputs, {}, seed=None, anchor=args.output)
    _info(
        args,
        f"indexed {index.doc_count} documents, "
        f"{len(index.vocabulary)} terms -> {args.output}",
    )


def _cmd_search(args: argparse.Namespace) -> None:
    inputs = {"corpus": args.corpus, "queries": args.queries}
    if args.model == "dense":
        if not args.doc_embeddings or not args.query_embeddings:
            raise ValueError(
                "--model dense requires --doc-embeddings and --query-embeddings"
            )
        inputs["doc-embeddings"] = args.doc_embeddings
        inputs["query-embeddings"] = args.query_embeddings
    outputs = {"output": args.output}
    _check_outputs_distinct(inputs, outputs)

    queries = load_queries(args.queries)
    if args.model == "dense":
        scorer = DenseScorer(
            load_embeddings(args.doc_embeddings),
            load_embeddings(args.query_embeddings),
            similarity=args.similarity,
        )
    else:
        index = build_index(load_corpus(args.corpus))
        if args.model == "bm25":
            scorer = Bm25Scorer(index, k1=args.k1, b=args.b)
        else:
            scorer = TfidfScorer(index)
    runs = search(scorer, queries, top_k=args.top_k)
    tag = args.run_tag or args.model
    write_run(runs, args.output, tag=tag)
    _write_manifest(
        "search", inputs, outputs,
        {
            "model": args.model,
            "top_k": args.top_k,
            "k1": args.k1,
            "b": args.b,
            "similarity": args.similarity,
            "run_tag": tag,
        },
        seed=None, anchor=args.output,
    )
    _info(args, f"ranked {len(runs)} queries with {args.model} -> {args.output}")


def _cmd_evaluate(args: argparse.Namespace) -> None:
    inputs = {"run": args.run, "qrels": args.qrels, "corpus": args.corpus}
    outputs = {"output": args.output}
    _check_outputs_distinct(inputs, outputs)

    runs = load_run(args.run)
    qrels = load_qrels(args.qrels)
    source_map = load_corpus(args.corpus).source_map()
    cutoffs = _parse_int_list(args.cutoffs, "--cutoffs")
    report = evaluate_runs(runs, qrels, source_map, cutoffs=cutoffs)
    _write_json(args.output, report.to_json_dict())
    _write_manifest(
        "evaluate", inputs, outputs, {"cutoffs": list(cutoffs)},
        seed=None, anchor=args.output,
    )
    _info(args, report.render_text())


def _cmd_spectrum(args: argparse.Namespace) -> None:
    inputs = {"embeddings": args.embeddings}
    if args.compare_embeddings:
        inputs["compare-embeddings"] = args.compare_embeddings
    outputs = {"output": args.output}
    _check_outputs_distinct(inputs, outputs)

    def spectrum_dict(path: str) -> dict:
        spectrum = singular_values(load_embeddings(path), center=args.center)
        return {
            "singular_values": list(spectrum.singular_values),
            "n_docs": spectrum.n_docs,
            "dim": spectrum.dim,
        }

    payload: dict[str, object] = {"schema_version": 1}
    if args.compare_embeddings:
        human = singular_values(load_embeddings(args.embeddings), center=args.center)
        generated = singular_values(
            load_embeddings(args.compare_embeddings), center=args.center
        )
        payload["human"] = {
            "singular_values": list(human.singular_values),
            "n_docs": human.n_docs,
            "dim": human.dim,
        }
        payload["generated"] = {
            "singular_values": list(generated.singular_values),
            "n_docs": generated.n_docs,
            "dim": generated.dim,
        }
        payload["comparison"] = compare_spectra(human, generated).to_json_dict()
    else:
        payload["spectrum"] = spectrum_dict(args.embeddings)
    _write_json(args.output, payload)
    _write_manifest(
        "spectrum", inputs, outputs, {"center": args.center},
        seed=None, anchor=args.output,
    )
    _info(args, f"spectrum written -> {args.output}")


def _cmd_ppl(args: argparse.Namespace) -> None:
    inputs = {"logprobs": args.logprobs}
    if args.compare:
        inputs["compare"] = args.compare
    outputs = {"output": args.output}
    _check_outputs_distinct(inputs, outputs)

    records = load_logprobs(args.logprobs)
    if args.compare:
        payload: dict[str, object] = {"schema_version": 1}
        payload.update(ppl_summary(records, load_logprobs(args.compare)).to_json_dict())
    else:
        values = {doc_id: perplexity(rec) for doc_id, rec in records.items()}
        payload = {
            "schema_version": 1,
            "count": len(values),
            "mean": statistics.fmean(values.values()),
            "median": statistics.median(values.values()),
            "per_document": values,
        }
    _write_json(args.output, payload)
    _write_manifest("ppl", inputs, outputs, {}, seed=None, anchor=args.output)
    _info(args, f"log-perplexity summary -> {args.output}")


def _train_config(args: argparse.Namespace, alpha: float, seed: int) -> TrainConfig:
    return TrainConfig(
        alpha=alpha,
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        negatives_per_query=args.negatives_per_query,
        seed=seed,
        rank=args.rank,
        tau=args.tau,
    )


def _cmd_train_debias(args: argparse.Namespace) -> None:
    inputs = {"triplets": args.triplets, "embeddings": args.embeddings}
    outputs = {"out": args.out}
    if args.log_output:
        outputs["log-output"] = args.log_output
    _check_outputs_distinct(inputs, outputs)

    seed = args.seed if args.seed is not None else 0
    cfg = _train_config(args, alpha=args.alpha, seed=seed)
    triplets = load_triplets(args.triplets, load_embeddings(args.embeddings))
    head, log = train(triplets, cfg)
    write_head(head, args.out)
    if args.log_output:
        _write_json(
            args.log_output,
            [
                {
                    "epoch": entry.epoch,
                    "rank_loss": entry.rank_loss,
                    "debias_loss": entry.debias_loss,
                    "total_loss": entry.total_loss,
                }
                for entry in log
            ],
        )
    _write_manifest(
        "train-debias", inputs, outputs,
        {
            "alpha": cfg.alpha,
            "learning_rate": cfg.learning_rate,
            "epochs": cfg.epochs,
            "batch_size": cfg.batch_size,
            "negatives_per_query": cfg.negatives_per_query,
            "rank": cfg.rank,
            "tau": cfg.tau,
        },
        seed=seed, anchor=args.out,
    )
    _info(
        args,
        f"trained {cfg.epochs} epochs: total loss "
        f"{log[0].total_loss:.6f} -> {log[-1].total_loss:.6f}; head -> {args.out}",
    )


def _cmd_sweep(args: argparse.Namespace) -> None:
    inputs = {
        "triplets": args.triplets,
        "eval-triplets": args.eval_triplets,
        "embeddings": args.embeddings,
    }
    outputs = {"output": args.output}
    _check_outputs_distinct(inputs, outputs)

    seed = args.seed if args.seed is not None else 0
    alphas = _parse_float_list(args.alpha_grid, "--alpha-grid")
    cutoffs = _parse_int_list(args.cutoffs, "--cutoffs")
    embeddings = load_embeddings(args.embeddings)
    train_triplets = load_triplets(args.triplets, embeddings)
    eval_triplets = load_triplets(args.eval_triplets, embeddings)
    cfg = _train_config(args, alpha=0.0, seed=seed)
    rows = alpha_sweep(
        train_triplets, eval_triplets, cfg, alphas,
        cutoffs=cutoffs, threads=args.threads,
    )
    best = best_alpha(rows)
    _write_json(
        args.output,
        {
            "schema_version": 1,
            "rows": [row.to_json_dict() for row in rows],
            "best_alpha": best.alpha,
        },
    )
    _write_manifest(
        "sweep", inputs, outputs,
        {
            "alpha_grid": list(alphas),
            "cutoffs": list(cutoffs),
            "learning_rate": cfg.learning_rate,
            "epochs": cfg.epochs,
            "batch_size": cfg.batch_size,
            "negatives_per_query": cfg.negatives_per_query,
            "rank": cfg.rank,
            "tau": cfg.tau,
            "threads": args.threads,
        },
        seed=seed, anchor=args.output,
    )
    for row in rows:
        delta = row.report.cell("ndcg", cutoffs[0]).relative_delta
        _info(args, f"alpha={row.alpha:g}: delta(ndcg@{cutoffs[0]}) = {delta:+.2f}")
    _info(args, f"best alpha by |delta(ndcg@1)|: {best.alpha:g} -> {args.output}")


def _cmd_verify_theorem(args: argparse.Namespace) -> None:
    inputs: dict[str, str] = {}
    if args.load_instances:
        inputs["load-instances"] = args.load_instances
    outputs = {"report": args.report}
    if args.save_instances:
        outputs["save-instances"] = args.save_instances
    _check_outputs_distinct(inputs, outputs)

    seed = args.seed if args.seed is not None else 0
    if args.load_instances:
        instances = []
        with open(args.load_instances, encoding="utf-8") as handle:
            for line_no, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise FormatError(
                        args.load_instances, line_no, f"invalid JSON ({exc.msg})"
                    ) from None
                try:
                    instances.append(TheoremInstance.from_json_dict(record))
                except (KeyError, TypeError, ValueError) as exc:
                    raise FormatError(args.load_instances, line_no, str(exc)) from None
    else:
        rng = np.random.default_rng(seed)
        instances = [
            sample_instance(args.alphabet, args.length, rng, method=args.method)
            for _ in range(args.instances)
        ]

    results = []
    for inst in instances:
        conditions = check_conditions(inst, kl_mode=args.kl_mode)
        outcome = verify_theorem(inst)
        chain = verify_proof_chain(inst, kl_mode=args.kl_mode)
        results.append(
            {
                "epsilon": inst.epsilon,
                "conditions": conditions.to_json_dict(),
                "expectation": outcome.expectation,
                "passed": outcome.passed,
                "proof_chain": [
                    {
                        "label": step.label,
                        "lhs": step.lhs,
                        "rhs": step.rhs,
                        "equality": step.equality,
                        "holds": step.holds,
                    }
                    for step in chain
                ],
            }
        )
    payload = {
        "schema_version": 1,
        "alphabet_size": args.alphabet,
        "length": args.length,
        "method": "pinned" if args.load_instances else args.method,
        "kl_mode": args.kl_mode,
        "instance_count": len(instances),
        "all_passed": all(r["passed"] for r in results),
        "max_expectation": max(r["expectation"] for r in results),
        "results": results,
    }
    _write_json(args.report, payload)
    if args.save_instances:
        with open(args.save_instances, "w", encoding="utf-8") as handle:
            for inst in instances:
                handle.write(json.dumps(inst.to_json_dict(), sort_keys=True) + "\n")
    _write_manifest(
        "verify-theorem", inputs, outputs,
        {
            "instances": len(instances),
            "alphabet": args.alphabet,
            "length": args.length,
            "method": payload["method"],
            "kl_mode": args.kl_mode,
        },
        seed=None if args.load_instances else seed, anchor=args.report,
    )
    _info(
        args,
        f"verified {len(instances)} instances "
        f"(max expectation {payload['max_expectation']:.3e}) -> {args.report}",
    )


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="seed for randomized subcommands (default 0)")
    common.add_argument("--threads", type=int, default=1,
                        help="worker processes where supported (sweep)")
    common.add_argument("--quiet", action="store_true",
                        help="suppress progress diagnostics on stderr")

    parser = argparse.ArgumentParser(
        prog="sourcebias",
        description="Build mixed human/LLM retrieval benchmarks and "
                    "measure source bias.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")

    p = sub.add_parser("build", parents=[common],
                       help="merge human docs with model rewrites, transfer labels")
    p.add_argument("--human-corpus", required=True)
    p.add_argument("--generated", required=True,
                   help="JSONL of {_id: origin doc id, text: raw rewrite}")
    p.add_argument("--qrels", required=True)
    p.add_argument("--model-tag", required=True)
    p.add_argument("--prompt-id", default=None)
    p.add_argument("--cleanup-pattern", action="append", default=None,
                   help="literal prefix marking a boilerplate line (repeatable)")
    p.add_argument("--output-corpus", required=True)
    p.add_argument("--output-qrels", required=True)
    p.set_defaults(handler=_cmd_build)

    p = sub.add_parser("stats", parents=[common],
                       help="similarity/length stats over origin-paired docs")
    p.add_argument("--corpus", required=True, help="mixed corpus JSONL")
    p.add_argument("--embeddings", default=None)
    p.add_argument("--per-pair-csv", default=None)
    p.add_argument("--output", required=True)
    p.set_defaults(handler=_cmd_stats)

    p = sub.add_parser("index", parents=[common],
                       help="build the lexical index and report a summary")
    p.add_argument("--corpus", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(handler=_cmd_index)

    p = sub.add_parser("search", parents=[common],
                       help="rank the corpus for each query, writing a run file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--model", required=True, choices=("bm25", "tfidf", "dense"))
    p.add_argument("--top-k", type=int, default=100)
    p.add_argument("--k1", type=float, default=1.2, help="bm25 only")
    p.add_argument("--b", type=float, default=0.75, help="bm25 only")
    p.add_argument("--similarity", choices=("dot", "cosine"), default="cosine",
                   help="dense only")
    p.add_argument("--doc-embeddings", default=None, help="dense only")
    p.add_argument("--query-embeddings", default=None, help="dense only")
    p.add_argument("--run-tag", default=None, help="defaults to the model name")
    p.add_argument("--output", required=True)
    p.set_defaults(handler=_cmd_search)

    p = sub.add_parser("evaluate", parents=[common],
                       help="per-source masked metrics and relative deltas")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--corpus", required=True,
                   help="supplies the document source assignment")
    p.add_argument("--cutoffs", default="1,3,5")
    p.add_argument("--output", default="report.json")
    p.set_defaults(handler=_cmd_evaluate)

    p = sub.add_parser("spectrum", parents=[common],
                       help="singular-value spectrum of an embedding matrix")
    p.add_argument("--embeddings", required=True,
                   help="human-side embeddings when comparing")
    p.add_argument("--compare-embeddings", default=None,
                   help="generated-side embeddings; adds a ratio comparison")
    p.add_argument("--center", action="store_true",
                   help="subtract the column mean before decomposing")
    p.add_argument("--output", required=True)
    p.set_defaults(handler=_cmd_spectrum)

    p = sub.add_parser("ppl", parents=[common],
                       help="log-perplexity per document from token log-probs")
    p.add_argument("--logprobs", required=True,
                   help="human-side records when comparing")
    p.add_argument("--compare", default=None,
                   help="generated-side records; adds distribution comparison")
    p.add_argument("--output", required=True)
    p.set_defaults(handler=_cmd_ppl)

    def add_train_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--rank", type=int, default=24)
        p.add_argument("--lr", type=float, default=0.02)
        p.add_argument("--epochs", type=int, default=100)
        p.add_argument("--batch-size", type=int, default=None)
        p.add_argument("--negatives-per-query", type=int, default=None)
        p.add_argument("--tau", type=float, default=0.05)

    p = sub.add_parser("train-debias", parents=[common],
                       help="train the low-rank scoring head on triplets")
    p.add_argument("--triplets", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--alpha", type=float, default=0.0)
    add_train_flags(p)
    p.add_argument("--log-output", default=None, help="write per-epoch losses")
    p.add_argument("--out", required=True, help="head JSON output")
    p.set_defaults(handler=_cmd_train_debias)

    p = sub.add_parser("sweep", parents=[common],
                       help="train once per alpha and evaluate bias on held-out triplets")
    p.add_argument("--triplets", required=True)
    p.add_argument("--eval-triplets", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--alpha-grid", required=True,
                   help="comma-separated alpha values")
    add_train_flags(p)
    p.add_argument("--cutoffs", default="1,3,5")
    p.add_argument("--output", required=True)
    p.set_defaults(handler=_cmd_sweep)

    p = sub.add_parser("verify-theorem", parents=[common],
                       help="check the perplexity bound on enumerable instances")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--alphabet", type=int, default=4, help="token alphabet size V")
    p.add_argument("--length", type=int, default=5, help="sequence length S")
    p.add_argument("--method", choices=("guided", "dirichlet"), default="guided")
    p.add_argument("--kl-mode", choices=("per-prefix", "averaged"),
                   default="per-prefix")
    p.add_argument("--save-instances", default=None,
                   help="pin sampled instances to a JSONL file")
    p.add_argument("--load-instances", default=None,
                   help="re-verify pinned instances instead of sampling")
    p.add_argument("--report", required=True, help="verification report JSON")
    p.set_defaults(handler=_cmd_verify_theorem)

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
    except (FormatError, OSError, ValueError, KeyError,
            DivergenceError, GenerationError) as exc:
        message = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {message}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc(file=sys.stderr)
        return 2
    return 0


def main() -> int:
    return dispatch(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
