"""Adapter CLI: exit codes, manifests, library agreement, determinism."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import httpx
import numpy as np
import pytest

pytest.importorskip("sourcebias_adapter")

from fixture_paths import FIXTURE_CORPUS
from sourcebias_adapter import (
    BigramMaskedScorer,
    HashingEmbedder,
    __version__,
    read_documents,
)
from sourcebias_adapter.cli import dispatch
from sourcebias_adapter.rewriter import RewriteClient


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _read_jsonl(path: Path) -> list[dict]:
    return [json.loads(line) for line in path.read_text().splitlines() if line]


class TestExitCodes:
    def test_version_and_help_are_zero(self, capsys):
        assert dispatch(["--version"]) == 0
        assert dispatch(["embed", "--help"]) == 0
        capsys.readouterr()

    def test_no_subcommand_prints_usage(self, capsys):
        assert dispatch([]) == 1
        assert "usage:" in capsys.readouterr().err

    def test_unknown_flag(self, capsys):
        assert dispatch(["embed", "--nope"]) == 1
        capsys.readouterr()

    def test_missing_corpus_file(self, tmp_path, capsys):
        code = dispatch([
            "embed", "--corpus", str(tmp_path / "nope.jsonl"),
            "--output", str(tmp_path / "out.jsonl"),
        ])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_malformed_corpus_names_line(self, tmp_path, capsys):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("not json\n", encoding="utf-8")
        code = dispatch([
            "embed", "--corpus", str(bad),
            "--output", str(tmp_path / "out.jsonl"),
        ])
        assert code == 1
        assert f"{bad}:1:" in capsys.readouterr().err

    def test_output_may_not_overwrite_input(self, tmp_path, capsys):
        before = FIXTURE_CORPUS.read_bytes()
        code = dispatch([
            "embed", "--corpus", str(FIXTURE_CORPUS),
            "--output", str(FIXTURE_CORPUS),
        ])
        assert code == 1
        assert "would overwrite an input file" in capsys.readouterr().err
        assert FIXTURE_CORPUS.read_bytes() == before

    def test_unavailable_model_is_reported(self, tmp_path, capsys):
        code = dispatch([
            "embed", "--corpus", str(FIXTURE_CORPUS),
            "--model", str(tmp_path / "no-model"),
            "--output", str(tmp_path / "out.jsonl"),
        ])
        assert code == 1
        assert "failed to load model" in capsys.readouterr().err

    def test_all_tokenless_corpus_fails(self, tmp_path, capsys):
        corpus = tmp_path / "c.jsonl"
        corpus.write_text('{"_id": "a", "text": "..."}\n', encoding="utf-8")
        code = dispatch([
            "pseudo-ppl", "--corpus", str(corpus),
            "--output", str(tmp_path / "out.jsonl"), "--quiet",
        ])
        assert code == 1
        assert "no documents could be scored" in capsys.readouterr().err

    def test_rewrite_without_credentials_fails(self, tmp_path, capsys, monkeypatch):
        for name in ("SOURCEBIAS_ADAPTER_API_KEY", "OPENAI_API_KEY"):
            monkeypatch.delenv(name, raising=False)
        code = dispatch([
            "rewrite", "--corpus", str(FIXTURE_CORPUS), "--model", "m",
            "--output", str(tmp_path / "out.jsonl"), "--quiet",
        ])
        assert code == 1
        assert "no API key" in capsys.readouterr().err

    def test_unexpected_error_is_exit_two(self, tmp_path, capsys, monkeypatch):
        import sourcebias_adapter.cli as cli_module

        def boom(path):
            raise RuntimeError("wires crossed")

        monkeypatch.setattr(cli_module, "read_documents", boom)
        code = dispatch([
            "embed", "--corpus", str(FIXTURE_CORPUS),
            "--output", str(tmp_path / "out.jsonl"), "--quiet",
        ])
        assert code == 2
        assert "Traceback" in capsys.readouterr().err


class TestEmbedCommand:
    def test_matches_library_route(self, tmp_path):
        out = tmp_path / "emb.jsonl"
        assert dispatch([
            "embed", "--corpus", str(FIXTURE_CORPUS), "--dim", "64",
            "--output", str(out), "--quiet",
        ]) == 0
        docs = read_documents(FIXTURE_CORPUS)
        expected = HashingEmbedder(dim=64).embed_documents(docs)
        records = _read_jsonl(out)
        assert [r["_id"] for r in records] == [d.doc_id for d in docs]
        assert np.array_equal(
            np.array([r["vector"] for r in records]), expected
        )

    def test_manifest_contents(self, tmp_path):
        out = tmp_path / "emb.jsonl"
        assert dispatch([
            "embed", "--corpus", str(FIXTURE_CORPUS),
            "--output", str(out), "--quiet",
        ]) == 0
        manifest = json.loads((tmp_path / "emb.jsonl.manifest.json").read_text())
        assert manifest == {
            "schema_version": 1,
            "subcommand": "embed",
            "version": __version__,
            "seed": None,
            "inputs": {"corpus": {
                "path": str(FIXTURE_CORPUS),
                "sha256": _sha256(FIXTURE_CORPUS),
            }},
            "outputs": {"output": str(out)},
            "parameters": {
                "model": "hash-v1",
                "dim": 256,
                "batch_size": 32,
                "max_length": 256,
            },
        }


class TestPseudoPplCommand:
    def test_matches_library_route(self, tmp_path):
        out = tmp_path / "lp.jsonl"
        assert dispatch([
            "pseudo-ppl", "--corpus", str(FIXTURE_CORPUS),
            "--output", str(out), "--quiet",
        ]) == 0
        docs = read_documents(FIXTURE_CORPUS)
        scorer = BigramMaskedScorer()
        scorer.fit(docs)
        expected = scorer.score_documents(docs)
        records = _read_jsonl(out)
        assert [(r["_id"], r["logprobs"]) for r in records] == [
            (doc_id, values) for doc_id, values in expected
        ]

    def test_skip_counts_recorded(self, tmp_path):
        corpus = tmp_path / "c.jsonl"
        corpus.write_text(
            '{"_id": "a", "text": "some words here"}\n'
            '{"_id": "b", "text": "..."}\n',
            encoding="utf-8",
        )
        out = tmp_path / "lp.jsonl"
        assert dispatch([
            "pseudo-ppl", "--corpus", str(corpus),
            "--output", str(out), "--quiet",
        ]) == 0
        assert [r["_id"] for r in _read_jsonl(out)] == ["a"]
        manifest = json.loads((tmp_path / "lp.jsonl.manifest.json").read_text())
        assert manifest["parameters"]["scored_count"] == 1
        assert manifest["parameters"]["skipped_count"] == 1

    def test_transformer_model_end_to_end(self, tmp_path, tiny_model_dir):
        out = tmp_path / "lp.jsonl"
        assert dispatch([
            "pseudo-ppl", "--corpus", str(FIXTURE_CORPUS),
            "--model", str(tiny_model_dir),
            "--max-length", "16", "--batch-size", "4",
            "--output", str(out), "--quiet",
        ]) == 0
        records = _read_jsonl(out)
        assert len(records) == 5
        assert all(len(r["logprobs"]) == 14 for r in records)  # 16 minus specials
        manifest = json.loads((tmp_path / "lp.jsonl.manifest.json").read_text())
        assert manifest["parameters"]["model"] == str(tiny_model_dir)


class TestRewriteCommand:
    def test_dry_run_writes_request_bodies(self, tmp_path):
        out = tmp_path / "req.jsonl"
        assert dispatch([
            "rewrite", "--corpus", str(FIXTURE_CORPUS), "--model", "gpt-x",
            "--dry-run", "--output", str(out), "--quiet",
        ]) == 0
        docs = read_documents(FIXTURE_CORPUS)
        records = _read_jsonl(out)
        assert [r["_id"] for r in records] == [d.doc_id for d in docs]
        for record, doc in zip(records, docs):
            content = record["request"]["messages"][0]["content"]
            assert content == f"Please rewrite the following text: {doc.text}"
        manifest = json.loads((tmp_path / "req.jsonl.manifest.json").read_text())
        assert manifest["parameters"]["dry_run"] is True
        assert manifest["parameters"]["prompt_id"] == "default"
        assert manifest["parameters"]["base_url"] is None
        assert manifest["parameters"]["request_count"] == 5

    def test_dry_run_needs_no_credentials(self, tmp_path, monkeypatch):
        for name in ("SOURCEBIAS_ADAPTER_API_KEY", "OPENAI_API_KEY"):
            monkeypatch.delenv(name, raising=False)
        assert dispatch([
            "rewrite", "--corpus", str(FIXTURE_CORPUS), "--model", "m",
            "--dry-run", "--output", str(tmp_path / "req.jsonl"), "--quiet",
        ]) == 0

    def test_custom_prompt_recorded_with_id(self, tmp_path):
        out = tmp_path / "req.jsonl"
        template = "Rephrase the passage: {text}"
        assert dispatch([
            "rewrite", "--corpus", str(FIXTURE_CORPUS), "--model", "m",
            "--prompt", template, "--dry-run",
            "--output", str(out), "--quiet",
        ]) == 0
        record = _read_jsonl(out)[0]
        assert record["request"]["messages"][0]["content"].startswith(
            "Rephrase the passage: "
        )
        manifest = json.loads((tmp_path / "req.jsonl.manifest.json").read_text())
        assert manifest["parameters"]["prompt_template"] == template
        assert manifest["parameters"]["prompt_id"] != "default"

    def _patch_transport(self, monkeypatch, handler):
        import sourcebias_adapter.cli as cli_module

        def make_client(settings, api_key, base_url):
            return RewriteClient(
                settings, api_key, base_url,
                transport=httpx.MockTransport(handler),
                sleep=lambda _: None,
            )

        monkeypatch.setattr(cli_module, "_make_client", make_client)

    def test_live_run_writes_raw_rewrites(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SOURCEBIAS_ADAPTER_API_KEY", "k")
        monkeypatch.setenv("SOURCEBIAS_ADAPTER_BASE_URL", "https://api.test/v1")

        def handler(request: httpx.Request) -> httpx.Response:
            body = json.loads(request.content)
            text = body["messages"][0]["content"].removeprefix(
                "Please rewrite the following text: "
            )
            return httpx.Response(200, json={
                "choices": [{"message": {
                    "content": f"Sure, here's a rewrite:\n\n{text}",
                }}],
            })

        self._patch_transport(monkeypatch, handler)
        out = tmp_path / "rewrites.jsonl"
        assert dispatch([
            "rewrite", "--corpus", str(FIXTURE_CORPUS), "--model", "gpt-x",
            "--output", str(out), "--quiet",
        ]) == 0
        docs = read_documents(FIXTURE_CORPUS)
        records = _read_jsonl(out)
        assert [r["_id"] for r in records] == [d.doc_id for d in docs]
        # responses stored raw, boilerplate intact
        assert all(r["text"].startswith("Sure, here's") for r in records)
        manifest = json.loads((tmp_path / "rewrites.jsonl.manifest.json").read_text())
        assert manifest["parameters"]["request_count"] == 5
        assert manifest["parameters"]["failure_count"] == 0
        assert manifest["parameters"]["base_url"] == "https://api.test/v1"

    def test_failures_create_skip_record(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("SOURCEBIAS_ADAPTER_API_KEY", "k")

        def handler(request: httpx.Request) -> httpx.Response:
            body = json.loads(request.content)
            if "Tidal marshes" in body["messages"][0]["content"]:
                return httpx.Response(503)
            return httpx.Response(200, json={
                "choices": [{"message": {"content": "ok"}}],
            })

        self._patch_transport(monkeypatch, handler)
        out = tmp_path / "rewrites.jsonl"
        assert dispatch([
            "rewrite", "--corpus", str(FIXTURE_CORPUS), "--model", "m",
            "--output", str(out), "--quiet",
        ]) == 0
        capsys.readouterr()
        assert len(_read_jsonl(out)) == 4
        skipped = json.loads((tmp_path / "rewrites.jsonl.skipped.json").read_text())
        assert [s["_id"] for s in skipped] == ["d1"]
        manifest = json.loads((tmp_path / "rewrites.jsonl.manifest.json").read_text())
        assert manifest["parameters"]["failure_count"] == 1
        assert manifest["outputs"]["skipped"].endswith("rewrites.jsonl.skipped.json")

    def test_all_failures_abort(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("SOURCEBIAS_ADAPTER_API_KEY", "k")
        self._patch_transport(
            monkeypatch, lambda request: httpx.Response(503)
        )
        code = dispatch([
            "rewrite", "--corpus", str(FIXTURE_CORPUS), "--model", "m",
            "--output", str(tmp_path / "out.jsonl"), "--quiet",
        ])
        assert code == 1
        assert "all 5 rewrite requests failed" in capsys.readouterr().err


class TestDiagnosticsAndDeterminism:
    def test_quiet_silences_progress(self, tmp_path, capsys):
        assert dispatch([
            "embed", "--corpus", str(FIXTURE_CORPUS),
            "--output", str(tmp_path / "e.jsonl"), "--quiet",
        ]) == 0
        captured = capsys.readouterr()
        assert captured.out == "" and captured.err == ""

    def test_progress_goes_to_stderr(self, tmp_path, capsys):
        assert dispatch([
            "embed", "--corpus", str(FIXTURE_CORPUS),
            "--output", str(tmp_path / "e.jsonl"),
        ]) == 0
        captured = capsys.readouterr()
        assert captured.out == ""
        assert "embedded 5 documents" in captured.err

    def test_reruns_are_byte_identical(self, tmp_path):
        commands = [
            ["embed", "--corpus", str(FIXTURE_CORPUS),
             "--output", str(tmp_path / "e.jsonl"), "--quiet"],
            ["pseudo-ppl", "--corpus", str(FIXTURE_CORPUS),
             "--output", str(tmp_path / "l.jsonl"), "--quiet"],
            ["rewrite", "--corpus", str(FIXTURE_CORPUS), "--model", "m",
             "--dry-run", "--output", str(tmp_path / "r.jsonl"), "--quiet"],
        ]

        def run_all() -> dict[str, str]:
            for argv in commands:
                assert dispatch(argv) == 0
            return {
                p.name: _sha256(p)
                for p in sorted(tmp_path.iterdir()) if p.is_file()
            }

        first = run_all()
        second = run_all()
        assert first == second
        assert len(first) == 6  # three outputs plus three manifests
