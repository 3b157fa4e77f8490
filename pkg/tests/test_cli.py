"""End-to-end checks of the command-line dispatcher.

Every test drives ``dispatch`` directly against files in a temporary
directory, the same entry point the console script uses.  The checks pin
exit codes, manifest contents, byte-level determinism of re-runs, the
refusal to overwrite input files, and agreement between each subcommand's
output and the same computation done through the library.
"""

from __future__ import annotations

import csv
import hashlib
import json
import statistics
import warnings

import numpy as np
import pytest

from sourcebias import __version__
from sourcebias.builder import BuildConfig, build_benchmark, corpus_stats
from sourcebias.cli import dispatch
from sourcebias.compression import compare_spectra, perplexity, ppl_summary, singular_values
from sourcebias.debias import (
    TrainConfig,
    alpha_sweep,
    best_alpha,
    load_head,
    load_triplets,
    make_shortcut_dataset,
    train,
    write_triplets,
)
from sourcebias.evaluation import evaluate_runs
from sourcebias.retrieval import Bm25Scorer, DenseScorer, build_index, search
from sourcebias.store import (
    EmbeddingSet,
    Source,
    TokenLogProbs,
    load_corpus,
    load_embeddings,
    load_qrels,
    load_queries,
    load_run,
    write_corpus,
    write_embeddings,
    write_logprobs,
    write_qrels,
)

HUMAN_DOCS = [
    {"_id": "d1", "text": "coral reefs shelter many fish species", "source": "human", "title": "Reefs"},
    {"_id": "d2", "text": "volcanic islands rise from the ocean floor", "source": "human"},
    {"_id": "d3", "text": "trade winds steer tropical storms", "source": "human"},
]
GENERATED_TEXTS = [
    {"_id": "d1", "text": "Sure, here's a rewrite:\nCoral reefs shelter countless fish species."},
    {"_id": "d2", "text": "Volcanic islands emerge slowly from the deep ocean floor."},
]
QRELS_LINES = ["q1\td1\t2", "q1\td2\t1", "q2\td3\t1"]
QUERIES = [
    {"_id": "q1", "text": "coral reef fish"},
    {"_id": "q2", "text": "tropical storms winds"},
]


def _sha256(path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record) + "\n")


@pytest.fixture
def sources(tmp_path):
    paths = {
        "human": tmp_path / "human.jsonl",
        "generated": tmp_path / "generated.jsonl",
        "qrels": tmp_path / "qrels.tsv",
        "queries": tmp_path / "queries.jsonl",
    }
    _write_jsonl(paths["human"], HUMAN_DOCS)
    _write_jsonl(paths["generated"], GENERATED_TEXTS)
    paths["qrels"].write_text("".join(line + "\n" for line in QRELS_LINES), encoding="utf-8")
    _write_jsonl(paths["queries"], QUERIES)
    return paths


def _build(sources, tmp_path, *extra):
    corpus_out = tmp_path / "mixed.jsonl"
    qrels_out = tmp_path / "mixed-qrels.tsv"
    code = dispatch(
        [
            "build", "--quiet",
            "--human-corpus", str(sources["human"]),
            "--generated", str(sources["generated"]),
            "--qrels", str(sources["qrels"]),
            "--model-tag", "m1",
            "--output-corpus", str(corpus_out),
            "--output-qrels", str(qrels_out),
            *extra,
        ]
    )
    assert code == 0
    return corpus_out, qrels_out


def _library_benchmark(sources):
    texts = {rec["_id"]: rec["text"] for rec in GENERATED_TEXTS}
    return build_benchmark(
        load_corpus(sources["human"]),
        texts,
        load_qrels(sources["qrels"]),
        BuildConfig(model_tag="m1"),
    )


@pytest.fixture
def debias_files(tmp_path):
    train_set, eval_set = make_shortcut_dataset(
        n_train=10, n_eval=4, dim=8, seed=3, shortcut_dim=4
    )
    paths = {
        "triplets": tmp_path / "train.tsv",
        "eval": tmp_path / "eval.tsv",
        "embeddings": tmp_path / "vectors.jsonl",
    }
    write_triplets(train_set, paths["triplets"])
    write_triplets(eval_set, paths["eval"])
    write_embeddings(train_set.embeddings, paths["embeddings"])
    return paths


def _write_logprob_files(tmp_path):
    human = {
        "a": TokenLogProbs("a", (-1.0, -2.0)),
        "b": TokenLogProbs("b", (-0.5, -1.5, -2.5)),
    }
    generated = {
        "c": TokenLogProbs("c", (-0.25, -0.75)),
        "d": TokenLogProbs("d", (-1.25,)),
    }
    human_path = tmp_path / "human-lp.jsonl"
    generated_path = tmp_path / "gen-lp.jsonl"
    write_logprobs(human, human_path)
    write_logprobs(generated, generated_path)
    return human_path, generated_path


def _write_vectors(path, pairs) -> None:
    write_embeddings(EmbeddingSet.from_arrays(pairs), path)


class TestExitCodes:
    def test_version_flag_exits_zero(self, capsys):
        assert dispatch(["--version"]) == 0
        assert __version__ in capsys.readouterr().out

    def test_help_exits_zero(self):
        assert dispatch(["--help"]) == 0

    def test_no_subcommand_prints_usage(self, capsys):
        assert dispatch([]) == 1
        assert "usage:" in capsys.readouterr().err

    def test_unknown_subcommand_fails(self):
        assert dispatch(["frobnicate"]) == 1

    def test_unknown_flag_fails(self, sources, tmp_path):
        code = dispatch(
            ["index", "--corpus", str(sources["human"]),
             "--output", str(tmp_path / "o.json"), "--no-such-flag"]
        )
        assert code == 1

    def test_missing_input_file_exits_one(self, tmp_path, capsys):
        code = dispatch(
            ["index", "--corpus", str(tmp_path / "absent.jsonl"),
             "--output", str(tmp_path / "o.json")]
        )
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_malformed_input_exits_one(self, tmp_path, capsys):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("{not json\n", encoding="utf-8")
        code = dispatch(
            ["index", "--corpus", str(bad), "--output", str(tmp_path / "o.json")]
        )
        assert code == 1
        err = capsys.readouterr().err
        assert "error:" in err
        assert f"{bad}:1:" in err

    def test_dense_without_embeddings_exits_one(self, sources, tmp_path, capsys):
        code = dispatch(
            ["search", "--corpus", str(sources["human"]),
             "--queries", str(sources["queries"]),
             "--model", "dense", "--output", str(tmp_path / "run.tsv")]
        )
        assert code == 1
        assert "--model dense requires" in capsys.readouterr().err

    def test_bad_cutoffs_exit_one(self, sources, tmp_path, capsys):
        corpus_out, qrels_out = _build(sources, tmp_path)
        run_out = tmp_path / "run.tsv"
        run_out.write_text("q1\tQ0\td1\t1\t1.0\tsys\n", encoding="utf-8")
        code = dispatch(
            ["evaluate", "--run", str(run_out), "--qrels", str(qrels_out),
             "--corpus", str(corpus_out), "--cutoffs", "a,b",
             "--output", str(tmp_path / "report.json")]
        )
        assert code == 1
        assert "--cutoffs expects comma-separated integers" in capsys.readouterr().err

    def test_output_overwriting_input_is_refused(self, sources, tmp_path, capsys):
        before = sources["human"].read_bytes()
        code = dispatch(
            ["index", "--corpus", str(sources["human"]),
             "--output", str(sources["human"])]
        )
        assert code == 1
        err = capsys.readouterr().err
        assert "would overwrite an input file" in err
        assert "--output" in err
        assert sources["human"].read_bytes() == before

    def test_unexpected_exception_exits_two(self, sources, tmp_path, monkeypatch, capsys):
        def boom(corpus):
            raise RuntimeError("boom")

        monkeypatch.setattr("sourcebias.cli.build_index", boom)
        code = dispatch(
            ["index", "--corpus", str(sources["human"]),
             "--output", str(tmp_path / "o.json")]
        )
        assert code == 2
        err = capsys.readouterr().err
        assert "Traceback" in err
        assert "boom" in err

    def test_keyerror_message_is_unwrapped(self, sources, tmp_path, monkeypatch, capsys):
        def missing(corpus):
            raise KeyError("missing embedding row")

        monkeypatch.setattr("sourcebias.cli.build_index", missing)
        code = dispatch(
            ["index", "--corpus", str(sources["human"]),
             "--output", str(tmp_path / "o.json")]
        )
        assert code == 1
        assert "error: missing embedding row" in capsys.readouterr().err

    def test_generation_error_exits_one(self, tmp_path, monkeypatch, capsys):
        from sourcebias.pplbound import GenerationError

        def exhausted(*args, **kwargs):
            raise GenerationError("sampling budget exhausted")

        monkeypatch.setattr("sourcebias.cli.sample_instance", exhausted)
        code = dispatch(
            ["verify-theorem", "--instances", "1",
             "--report", str(tmp_path / "r.json")]
        )
        assert code == 1
        assert "error: sampling budget exhausted" in capsys.readouterr().err

    def test_divergence_exits_one(self, debias_files, tmp_path, capsys):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            with np.errstate(all="ignore"):
                code = dispatch(
                    ["train-debias",
                     "--triplets", str(debias_files["triplets"]),
                     "--embeddings", str(debias_files["embeddings"]),
                     "--rank", "4", "--epochs", "30", "--lr", "1e6",
                     "--out", str(tmp_path / "head.json")]
                )
        assert code == 1
        assert "diverged" in capsys.readouterr().err


class TestManifests:
    def test_index_manifest_is_fully_pinned(self, sources, tmp_path):
        out = tmp_path / "index.json"
        assert dispatch(
            ["index", "--quiet", "--corpus", str(sources["human"]),
             "--output", str(out)]
        ) == 0
        manifest = json.loads((tmp_path / "index.json.manifest.json").read_text(encoding="utf-8"))
        assert manifest == {
            "schema_version": 1,
            "subcommand": "index",
            "version": __version__,
            "seed": None,
            "inputs": {
                "corpus": {
                    "path": str(sources["human"]),
                    "sha256": _sha256(sources["human"]),
                }
            },
            "outputs": {"output": str(out)},
            "parameters": {},
        }

    def test_search_manifest_records_parameters(self, sources, tmp_path):
        corpus_out, _ = _build(sources, tmp_path)
        run_out = tmp_path / "run.tsv"
        assert dispatch(
            ["search", "--quiet", "--corpus", str(corpus_out),
             "--queries", str(sources["queries"]),
             "--model", "bm25", "--k1", "1.5", "--top-k", "10",
             "--output", str(run_out)]
        ) == 0
        manifest = json.loads((tmp_path / "run.tsv.manifest.json").read_text(encoding="utf-8"))
        assert manifest["subcommand"] == "search"
        assert manifest["parameters"] == {
            "model": "bm25",
            "top_k": 10,
            "k1": 1.5,
            "b": 0.75,
            "similarity": "cosine",
            "run_tag": "bm25",
        }
        assert set(manifest["inputs"]) == {"corpus", "queries"}

    def test_build_manifest_records_parameters(self, sources, tmp_path):
        corpus_out, qrels_out = _build(sources, tmp_path, "--prompt-id", "p7")
        manifest = json.loads(
            (tmp_path / "mixed.jsonl.manifest.json").read_text(encoding="utf-8")
        )
        assert manifest["subcommand"] == "build"
        assert manifest["parameters"]["model_tag"] == "m1"
        assert manifest["parameters"]["prompt_id"] == "p7"
        assert isinstance(manifest["parameters"]["cleanup_patterns"], list)
        assert manifest["parameters"]["cleanup_patterns"]
        assert manifest["outputs"] == {
            "output-corpus": str(corpus_out),
            "output-qrels": str(qrels_out),
        }
        assert set(manifest["inputs"]) == {"human-corpus", "generated", "qrels"}

    def test_seed_defaults_to_zero_for_training(self, debias_files, tmp_path):
        out = tmp_path / "head.json"
        assert dispatch(
            ["train-debias", "--quiet",
             "--triplets", str(debias_files["triplets"]),
             "--embeddings", str(debias_files["embeddings"]),
             "--rank", "4", "--epochs", "2",
             "--out", str(out)]
        ) == 0
        manifest = json.loads((tmp_path / "head.json.manifest.json").read_text(encoding="utf-8"))
        assert manifest["seed"] == 0

    def test_explicit_seed_is_recorded(self, debias_files, tmp_path):
        out = tmp_path / "head.json"
        assert dispatch(
            ["train-debias", "--quiet", "--seed", "7",
             "--triplets", str(debias_files["triplets"]),
             "--embeddings", str(debias_files["embeddings"]),
             "--rank", "4", "--epochs", "2",
             "--out", str(out)]
        ) == 0
        manifest = json.loads((tmp_path / "head.json.manifest.json").read_text(encoding="utf-8"))
        assert manifest["seed"] == 7


class TestDeterminism:
    def test_search_rerun_is_byte_identical(self, sources, tmp_path):
        corpus_out, _ = _build(sources, tmp_path)
        run_out = tmp_path / "run.tsv"
        argv = [
            "search", "--quiet", "--corpus", str(corpus_out),
            "--queries", str(sources["queries"]),
            "--model", "bm25", "--output", str(run_out),
        ]
        assert dispatch(argv) == 0
        first_run = run_out.read_bytes()
        manifest_path = tmp_path / "run.tsv.manifest.json"
        first_manifest = manifest_path.read_bytes()
        assert dispatch(argv) == 0
        assert run_out.read_bytes() == first_run
        assert manifest_path.read_bytes() == first_manifest

    def test_seeded_sampling_rerun_is_byte_identical(self, tmp_path):
        report = tmp_path / "report.json"
        argv = [
            "verify-theorem", "--quiet", "--seed", "3",
            "--instances", "2", "--alphabet", "2", "--length", "2",
            "--report", str(report),
        ]
        assert dispatch(argv) == 0
        first = report.read_bytes()
        first_manifest = (tmp_path / "report.json.manifest.json").read_bytes()
        assert dispatch(argv) == 0
        assert report.read_bytes() == first
        assert (tmp_path / "report.json.manifest.json").read_bytes() == first_manifest

    def test_pipeline_leaves_inputs_unmodified(self, sources, tmp_path):
        before = {name: _sha256(path) for name, path in sources.items()}
        corpus_out, qrels_out = _build(sources, tmp_path)
        run_out = tmp_path / "run.tsv"
        assert dispatch(
            ["search", "--quiet", "--corpus", str(corpus_out),
             "--queries", str(sources["queries"]),
             "--model", "bm25", "--output", str(run_out)]
        ) == 0
        assert dispatch(
            ["evaluate", "--quiet", "--run", str(run_out),
             "--qrels", str(qrels_out), "--corpus", str(corpus_out),
             "--output", str(tmp_path / "report.json")]
        ) == 0
        after = {name: _sha256(path) for name, path in sources.items()}
        assert after == before


class TestBuildCommand:
    def test_outputs_match_library_byte_for_byte(self, sources, tmp_path):
        corpus_out, qrels_out = _build(sources, tmp_path)
        mixed, mixed_qrels = _library_benchmark(sources)
        lib_corpus = tmp_path / "lib-mixed.jsonl"
        lib_qrels = tmp_path / "lib-qrels.tsv"
        write_corpus(mixed, lib_corpus)
        write_qrels(mixed_qrels, lib_qrels)
        assert corpus_out.read_bytes() == lib_corpus.read_bytes()
        assert qrels_out.read_bytes() == lib_qrels.read_bytes()

    def test_default_patterns_strip_boilerplate(self, sources, tmp_path):
        corpus_out, _ = _build(sources, tmp_path)
        rewritten = load_corpus(corpus_out)["d1@m1"]
        assert rewritten.text.startswith("Coral reefs")
        assert "Sure" not in rewritten.text

    def test_custom_pattern_overrides_defaults(self, sources, tmp_path):
        corpus_out, _ = _build(sources, tmp_path, "--cleanup-pattern", "NOTE:")
        rewritten = load_corpus(corpus_out)["d1@m1"]
        assert rewritten.text.startswith("Sure, here's a rewrite:")
        manifest = json.loads(
            (tmp_path / "mixed.jsonl.manifest.json").read_text(encoding="utf-8")
        )
        assert manifest["parameters"]["cleanup_patterns"] == ["NOTE:"]


class TestStatsCommand:
    def test_report_and_csv_match_library(self, sources, tmp_path):
        corpus_out, _ = _build(sources, tmp_path)
        out = tmp_path / "stats.json"
        pair_csv = tmp_path / "pairs.csv"
        assert dispatch(
            ["stats", "--quiet", "--corpus", str(corpus_out),
             "--per-pair-csv", str(pair_csv), "--output", str(out)]
        ) == 0
        mixed = load_corpus(corpus_out)
        stats = corpus_stats(mixed.subset(Source.HUMAN), mixed.subset(Source.GENERATED))
        assert json.loads(out.read_text(encoding="utf-8")) == stats.to_json_dict()
        with open(pair_csv, encoding="utf-8", newline="") as handle:
            rows = list(csv.reader(handle))
        assert rows == stats.per_pair_rows()

    def test_embeddings_add_cosine_column(self, sources, tmp_path):
        corpus_out, _ = _build(sources, tmp_path)
        vectors = tmp_path / "vectors.jsonl"
        _write_vectors(
            vectors,
            {
                "d1": np.array([1.0, 0.0, 0.0]),
                "d2": np.array([0.0, 1.0, 0.0]),
                "d1@m1": np.array([1.0, 1.0, 0.0]),
                "d2@m1": np.array([0.0, 1.0, 1.0]),
            },
        )
        out = tmp_path / "stats.json"
        assert dispatch(
            ["stats", "--quiet", "--corpus", str(corpus_out),
             "--embeddings", str(vectors), "--output", str(out)]
        ) == 0
        mixed = load_corpus(corpus_out)
        stats = corpus_stats(
            mixed.subset(Source.HUMAN),
            mixed.subset(Source.GENERATED),
            load_embeddings(vectors),
        )
        payload = json.loads(out.read_text(encoding="utf-8"))
        assert payload == stats.to_json_dict()
        assert payload["cosine_mean"] is not None
        assert "cosine_hist" in payload

    def test_corpus_without_generated_side_fails(self, sources, tmp_path, capsys):
        code = dispatch(
            ["stats", "--corpus", str(sources["human"]),
             "--output", str(tmp_path / "stats.json")]
        )
        assert code == 1
        assert "error:" in capsys.readouterr().err


class TestIndexCommand:
    def test_summary_matches_library_index(self, sources, tmp_path):
        corpus_out, _ = _build(sources, tmp_path)
        out = tmp_path / "index.json"
        assert dispatch(
            ["index", "--quiet", "--corpus", str(corpus_out), "--output", str(out)]
        ) == 0
        index = build_index(load_corpus(corpus_out))
        payload = json.loads(out.read_text(encoding="utf-8"))
        assert payload["schema_version"] == 1
        assert payload["doc_count"] == index.doc_count == 5
        assert payload["avgdl"] == index.avgdl
        assert payload["vocabulary_size"] == len(index.vocabulary)
        assert payload["postings_total"] == sum(
            len(rows) for rows in index.postings.values()
        )
        for term, df in payload["top_terms"]:
            assert index.df[index.vocabulary[term]] == df
        dfs = [df for _, df in payload["top_terms"]]
        assert dfs == sorted(dfs, reverse=True)


class TestSearchCommand:
    def test_bm25_run_matches_library(self, sources, tmp_path):
        corpus_out, _ = _build(sources, tmp_path)
        run_out = tmp_path / "run.tsv"
        assert dispatch(
            ["search", "--quiet", "--corpus", str(corpus_out),
             "--queries", str(sources["queries"]),
             "--model", "bm25", "--output", str(run_out)]
        ) == 0
        expected = search(
            Bm25Scorer(build_index(load_corpus(corpus_out))),
            load_queries(sources["queries"]),
            top_k=100,
        )
        loaded = load_run(run_out)
        assert [run.query_id for run in loaded] == [run.query_id for run in expected]
        for got, want in zip(loaded, expected):
            assert got.entries == want.entries

    def test_run_tag_defaults_to_model_name(self, sources, tmp_path):
        corpus_out, _ = _build(sources, tmp_path)
        run_out = tmp_path / "run.tsv"
        assert dispatch(
            ["search", "--quiet", "--corpus", str(corpus_out),
             "--queries", str(sources["queries"]),
             "--model", "tfidf", "--output", str(run_out)]
        ) == 0
        first = run_out.read_text(encoding="utf-8").splitlines()[0].split()
        assert first[5] == "tfidf"

    def test_explicit_run_tag_is_used(self, sources, tmp_path):
        corpus_out, _ = _build(sources, tmp_path)
        run_out = tmp_path / "run.tsv"
        assert dispatch(
            ["search", "--quiet", "--corpus", str(corpus_out),
             "--queries", str(sources["queries"]),
             "--model", "bm25", "--run-tag", "myrun",
             "--output", str(run_out)]
        ) == 0
        first = run_out.read_text(encoding="utf-8").splitlines()[0].split()
        assert first[5] == "myrun"

    def test_dense_run_matches_library(self, sources, tmp_path):
        corpus_out, _ = _build(sources, tmp_path)
        doc_vecs = tmp_path / "docs.jsonl"
        query_vecs = tmp_path / "queries-emb.jsonl"
        _write_vectors(
            doc_vecs,
            {
                "d1": np.array([1.0, 0.0, 0.0, 0.0]),
                "d2": np.array([0.0, 1.0, 0.0, 0.0]),
                "d3": np.array([0.0, 0.0, 1.0, 0.0]),
                "d1@m1": np.array([0.9, 0.1, 0.0, 0.0]),
                "d2@m1": np.array([0.0, 0.9, 0.2, 0.0]),
            },
        )
        _write_vectors(
            query_vecs,
            {
                "q1": np.array([1.0, 0.2, 0.0, 0.0]),
                "q2": np.array([0.0, 0.0, 1.0, 0.1]),
            },
        )
        run_out = tmp_path / "run.tsv"
        assert dispatch(
            ["search", "--quiet", "--corpus", str(corpus_out),
             "--queries", str(sources["queries"]),
             "--model", "dense",
             "--doc-embeddings", str(doc_vecs),
             "--query-embeddings", str(query_vecs),
             "--output", str(run_out)]
        ) == 0
        expected = search(
            DenseScorer(
                load_embeddings(doc_vecs),
                load_embeddings(query_vecs),
                similarity="cosine",
            ),
            load_queries(sources["queries"]),
            top_k=100,
        )
        loaded = load_run(run_out)
        for got, want in zip(loaded, expected):
            assert got.entries == want.entries

    def test_top_k_truncates_rankings(self, sources, tmp_path):
        corpus_out, _ = _build(sources, tmp_path)
        run_out = tmp_path / "run.tsv"
        assert dispatch(
            ["search", "--quiet", "--corpus", str(corpus_out),
             "--queries", str(sources["queries"]),
             "--model", "bm25", "--top-k", "1",
             "--output", str(run_out)]
        ) == 0
        for run in load_run(run_out):
            assert len(run.entries) == 1


class TestEvaluateCommand:
    def test_report_matches_library(self, sources, tmp_path):
        corpus_out, qrels_out = _build(sources, tmp_path)
        run_out = tmp_path / "run.tsv"
        assert dispatch(
            ["search", "--quiet", "--corpus", str(corpus_out),
             "--queries", str(sources["queries"]),
             "--model", "bm25", "--output", str(run_out)]
        ) == 0
        report_out = tmp_path / "report.json"
        assert dispatch(
            ["evaluate", "--quiet", "--run", str(run_out),
             "--qrels", str(qrels_out), "--corpus", str(corpus_out),
             "--output", str(report_out)]
        ) == 0
        report = evaluate_runs(
            load_run(run_out),
            load_qrels(qrels_out),
            load_corpus(corpus_out).source_map(),
            cutoffs=(1, 3, 5),
        )
        assert json.loads(report_out.read_text(encoding="utf-8")) == report.to_json_dict()

    def test_cutoffs_flag_selects_depths(self, sources, tmp_path):
        corpus_out, qrels_out = _build(sources, tmp_path)
        run_out = tmp_path / "run.tsv"
        assert dispatch(
            ["search", "--quiet", "--corpus", str(corpus_out),
             "--queries", str(sources["queries"]),
             "--model", "bm25", "--output", str(run_out)]
        ) == 0
        report_out = tmp_path / "report.json"
        assert dispatch(
            ["evaluate", "--quiet", "--run", str(run_out),
             "--qrels", str(qrels_out), "--corpus", str(corpus_out),
             "--cutoffs", "1,2", "--output", str(report_out)]
        ) == 0
        payload = json.loads(report_out.read_text(encoding="utf-8"))
        assert set(payload["metrics"]["ndcg"]) == {"1", "2"}

    def test_summary_table_goes_to_stderr(self, sources, tmp_path, capsys):
        corpus_out, qrels_out = _build(sources, tmp_path)
        run_out = tmp_path / "run.tsv"
        assert dispatch(
            ["search", "--quiet", "--corpus", str(corpus_out),
             "--queries", str(sources["queries"]),
             "--model", "bm25", "--output", str(run_out)]
        ) == 0
        capsys.readouterr()
        assert dispatch(
            ["evaluate", "--run", str(run_out),
             "--qrels", str(qrels_out), "--corpus", str(corpus_out),
             "--output", str(tmp_path / "report.json")]
        ) == 0
        captured = capsys.readouterr()
        assert "NDCG@1" in captured.err
        assert captured.out == ""


class TestSpectrumCommand:
    def _vectors(self, tmp_path, name, offset=0.0):
        path = tmp_path / name
        rng = np.random.default_rng(11)
        _write_vectors(
            path,
            {f"v{i}": rng.standard_normal(3) + offset for i in range(4)},
        )
        return path

    def test_single_spectrum_matches_library(self, tmp_path):
        vectors = self._vectors(tmp_path, "emb.jsonl")
        out = tmp_path / "spectrum.json"
        assert dispatch(
            ["spectrum", "--quiet", "--embeddings", str(vectors),
             "--output", str(out)]
        ) == 0
        spectrum = singular_values(load_embeddings(vectors))
        payload = json.loads(out.read_text(encoding="utf-8"))
        assert payload["spectrum"] == {
            "singular_values": list(spectrum.singular_values),
            "n_docs": 4,
            "dim": 3,
        }

    def test_compare_mode_adds_ratio_report(self, tmp_path):
        human = self._vectors(tmp_path, "human.jsonl")
        generated = self._vectors(tmp_path, "generated.jsonl", offset=0.5)
        out = tmp_path / "spectrum.json"
        assert dispatch(
            ["spectrum", "--quiet", "--embeddings", str(human),
             "--compare-embeddings", str(generated), "--output", str(out)]
        ) == 0
        payload = json.loads(out.read_text(encoding="utf-8"))
        comparison = compare_spectra(
            singular_values(load_embeddings(human)),
            singular_values(load_embeddings(generated)),
        )
        assert payload["comparison"] == comparison.to_json_dict()
        assert set(payload) == {"schema_version", "human", "generated", "comparison"}

    def test_center_flag_changes_spectrum(self, tmp_path):
        vectors = self._vectors(tmp_path, "emb.jsonl", offset=2.0)
        plain_out = tmp_path / "plain.json"
        centered_out = tmp_path / "centered.json"
        assert dispatch(
            ["spectrum", "--quiet", "--embeddings", str(vectors),
             "--output", str(plain_out)]
        ) == 0
        assert dispatch(
            ["spectrum", "--quiet", "--embeddings", str(vectors), "--center",
             "--output", str(centered_out)]
        ) == 0
        plain = json.loads(plain_out.read_text(encoding="utf-8"))
        centered = json.loads(centered_out.read_text(encoding="utf-8"))
        assert plain["spectrum"] != centered["spectrum"]
        manifest = json.loads(
            (tmp_path / "centered.json.manifest.json").read_text(encoding="utf-8")
        )
        assert manifest["parameters"] == {"center": True}


class TestPplCommand:
    def test_single_file_summary_matches_library(self, tmp_path):
        human_path, _ = _write_logprob_files(tmp_path)
        out = tmp_path / "ppl.json"
        assert dispatch(
            ["ppl", "--quiet", "--logprobs", str(human_path), "--output", str(out)]
        ) == 0
        records = {
            "a": TokenLogProbs("a", (-1.0, -2.0)),
            "b": TokenLogProbs("b", (-0.5, -1.5, -2.5)),
        }
        values = {doc_id: perplexity(rec) for doc_id, rec in records.items()}
        payload = json.loads(out.read_text(encoding="utf-8"))
        assert payload == {
            "schema_version": 1,
            "count": 2,
            "mean": statistics.fmean(values.values()),
            "median": statistics.median(values.values()),
            "per_document": values,
        }

    def test_compare_mode_matches_library(self, tmp_path):
        human_path, generated_path = _write_logprob_files(tmp_path)
        out = tmp_path / "ppl.json"
        assert dispatch(
            ["ppl", "--quiet", "--logprobs", str(human_path),
             "--compare", str(generated_path), "--output", str(out)]
        ) == 0
        from sourcebias.store import load_logprobs

        summary = ppl_summary(
            load_logprobs(human_path), load_logprobs(generated_path)
        )
        payload = json.loads(out.read_text(encoding="utf-8"))
        expected = {"schema_version": 1}
        expected.update(summary.to_json_dict())
        assert payload == expected


class TestTrainDebiasCommand:
    def test_head_and_log_match_library_training(self, debias_files, tmp_path):
        head_out = tmp_path / "head.json"
        log_out = tmp_path / "log.json"
        assert dispatch(
            ["train-debias", "--quiet", "--seed", "5",
             "--triplets", str(debias_files["triplets"]),
             "--embeddings", str(debias_files["embeddings"]),
             "--alpha", "0.001", "--rank", "4", "--epochs", "3",
             "--log-output", str(log_out), "--out", str(head_out)]
        ) == 0
        cfg = TrainConfig(
            alpha=0.001,
            learning_rate=0.02,
            epochs=3,
            batch_size=None,
            negatives_per_query=None,
            seed=5,
            rank=4,
            tau=0.05,
        )
        triplets = load_triplets(
            debias_files["triplets"], load_embeddings(debias_files["embeddings"])
        )
        expected_head, expected_log = train(triplets, cfg)
        head = load_head(head_out)
        assert np.array_equal(head.matrix, expected_head.matrix)
        assert head.tau == expected_head.tau
        log_payload = json.loads(log_out.read_text(encoding="utf-8"))
        assert log_payload == [
            {
                "epoch": entry.epoch,
                "rank_loss": entry.rank_loss,
                "debias_loss": entry.debias_loss,
                "total_loss": entry.total_loss,
            }
            for entry in expected_log
        ]
        assert [entry["epoch"] for entry in log_payload] == [1, 2, 3]


class TestSweepCommand:
    def test_rows_and_best_alpha_match_library(self, debias_files, tmp_path):
        out = tmp_path / "sweep.json"
        assert dispatch(
            ["sweep", "--quiet",
             "--triplets", str(debias_files["triplets"]),
             "--eval-triplets", str(debias_files["eval"]),
             "--embeddings", str(debias_files["embeddings"]),
             "--alpha-grid", "0,0.001", "--cutoffs", "1",
             "--rank", "4", "--epochs", "5",
             "--output", str(out)]
        ) == 0
        embeddings = load_embeddings(debias_files["embeddings"])
        cfg = TrainConfig(
            alpha=0.0,
            learning_rate=0.02,
            epochs=5,
            batch_size=None,
            negatives_per_query=None,
            seed=0,
            rank=4,
            tau=0.05,
        )
        rows = alpha_sweep(
            load_triplets(debias_files["triplets"], embeddings),
            load_triplets(debias_files["eval"], embeddings),
            cfg,
            (0.0, 0.001),
            cutoffs=(1,),
        )
        payload = json.loads(out.read_text(encoding="utf-8"))
        assert payload == {
            "schema_version": 1,
            "rows": [row.to_json_dict() for row in rows],
            "best_alpha": best_alpha(rows).alpha,
        }

    def test_empty_alpha_grid_fails(self, debias_files, tmp_path, capsys):
        code = dispatch(
            ["sweep",
             "--triplets", str(debias_files["triplets"]),
             "--eval-triplets", str(debias_files["eval"]),
             "--embeddings", str(debias_files["embeddings"]),
             "--alpha-grid", ",", "--rank", "4",
             "--output", str(tmp_path / "sweep.json")]
        )
        assert code == 1
        assert "--alpha-grid must name at least one value" in capsys.readouterr().err


class TestVerifyTheoremCommand:
    def test_sampled_instances_all_pass(self, tmp_path):
        report_path = tmp_path / "report.json"
        assert dispatch(
            ["verify-theorem", "--quiet", "--seed", "5",
             "--instances", "2", "--alphabet", "3", "--length", "2",
             "--report", str(report_path)]
        ) == 0
        report = json.loads(report_path.read_text(encoding="utf-8"))
        assert report["schema_version"] == 1
        assert report["instance_count"] == 2
        assert report["method"] == "guided"
        assert report["kl_mode"] == "per-prefix"
        assert report["all_passed"] is True
        assert report["max_expectation"] <= 0.0
        assert len(report["results"]) == 2
        for result in report["results"]:
            assert result["epsilon"] >= 0.0
            assert result["passed"] is True
            assert isinstance(result["conditions"], dict)
            assert len(result["proof_chain"]) == 5
            assert all(step["holds"] for step in result["proof_chain"])

    def test_saved_instances_reverify_as_pinned(self, tmp_path):
        pins = tmp_path / "pins.jsonl"
        first_report = tmp_path / "first.json"
        assert dispatch(
            ["verify-theorem", "--quiet", "--seed", "9",
             "--instances", "2", "--alphabet", "3", "--length", "2",
             "--save-instances", str(pins), "--report", str(first_report)]
        ) == 0
        assert len(pins.read_text(encoding="utf-8").splitlines()) == 2
        second_report = tmp_path / "second.json"
        assert dispatch(
            ["verify-theorem", "--quiet", "--load-instances", str(pins),
             "--report", str(second_report)]
        ) == 0
        first = json.loads(first_report.read_text(encoding="utf-8"))
        second = json.loads(second_report.read_text(encoding="utf-8"))
        assert second["method"] == "pinned"
        assert [r["epsilon"] for r in second["results"]] == [
            r["epsilon"] for r in first["results"]
        ]
        assert [r["expectation"] for r in second["results"]] == [
            r["expectation"] for r in first["results"]
        ]
        manifest = json.loads(
            (tmp_path / "second.json.manifest.json").read_text(encoding="utf-8")
        )
        assert manifest["seed"] is None
        assert set(manifest["inputs"]) == {"load-instances"}

    def test_malformed_pinned_instances_fail(self, tmp_path, capsys):
        pins = tmp_path / "pins.jsonl"
        pins.write_text("not json\n", encoding="utf-8")
        code = dispatch(
            ["verify-theorem", "--load-instances", str(pins),
             "--report", str(tmp_path / "report.json")]
        )
        assert code == 1
        err = capsys.readouterr().err
        assert "error:" in err
        assert "invalid JSON" in err


class TestDiagnostics:
    def test_quiet_silences_progress(self, sources, tmp_path, capsys):
        assert dispatch(
            ["index", "--quiet", "--corpus", str(sources["human"]),
             "--output", str(tmp_path / "o.json")]
        ) == 0
        captured = capsys.readouterr()
        assert captured.err == ""
        assert captured.out == ""

    def test_progress_goes_to_stderr_only(self, sources, tmp_path, capsys):
        assert dispatch(
            ["index", "--corpus", str(sources["human"]),
             "--output", str(tmp_path / "o.json")]
        ) == 0
        captured = capsys.readouterr()
        assert "indexed" in captured.err
        assert captured.out == ""

    def test_errors_still_print_under_quiet(self, tmp_path, capsys):
        code = dispatch(
            ["index", "--quiet", "--corpus", str(tmp_path / "absent.jsonl"),
             "--output", str(tmp_path / "o.json")]
        )
        assert code == 1
        assert "error:" in capsys.readouterr().err


class TestPipelineComposition:
    def test_cli_pipeline_equals_library_composition(self, sources, tmp_path):
        corpus_out, qrels_out = _build(sources, tmp_path)
        run_out = tmp_path / "run.tsv"
        assert dispatch(
            ["search", "--quiet", "--corpus", str(corpus_out),
             "--queries", str(sources["queries"]),
             "--model", "bm25", "--output", str(run_out)]
        ) == 0
        report_out = tmp_path / "report.json"
        assert dispatch(
            ["evaluate", "--quiet", "--run", str(run_out),
             "--qrels", str(qrels_out), "--corpus", str(corpus_out),
             "--output", str(report_out)]
        ) == 0

        mixed, mixed_qrels = _library_benchmark(sources)
        runs = search(
            Bm25Scorer(build_index(mixed)),
            load_queries(sources["queries"]),
            top_k=100,
        )
        report = evaluate_runs(
            runs, mixed_qrels, mixed.source_map(), cutoffs=(1, 3, 5)
        )
        assert json.loads(report_out.read_text(encoding="utf-8")) == report.to_json_dict()
