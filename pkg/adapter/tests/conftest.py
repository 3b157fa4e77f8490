"""Shared fixtures for the adapter suite.

Adapter imports happen lazily inside fixtures/tests so that collecting
this directory without the package installed skips instead of erroring.
"""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from fixture_paths import FIXTURE_CORPUS


@pytest.fixture(scope="session")
def fixture_docs():
    from sourcebias_adapter import read_documents

    return read_documents(FIXTURE_CORPUS)


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory) -> Path:
    """A word-level tokenizer plus a tiny randomly-initialized masked-LM
    checkpoint saved to disk, so the transformers code path runs offline."""
    torch = pytest.importorskip("torch")
    transformers = pytest.importorskip("transformers")

    words: set[str] = set()
    with open(FIXTURE_CORPUS, encoding="utf-8") as handle:
        for line in handle:
            text = json.loads(line)["text"].lower()
            words.update("".join(c if c.isalnum() else " " for c in text).split())
    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"] + sorted(words)

    target = tmp_path_factory.mktemp("tiny-mlm")
    (target / "vocab.txt").write_text("\n".join(vocab) + "\n", encoding="utf-8")
    tokenizer = transformers.BertTokenizerFast(
        vocab_file=str(target / "vocab.txt"), do_lower_case=True
    )
    config = transformers.BertConfig(
        vocab_size=len(vocab),
        hidden_size=32,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=64,
        max_position_embeddings=128,
    )
    torch.manual_seed(0)
    model = transformers.BertForMaskedLM(config)
    model.save_pretrained(target)
    tokenizer.save_pretrained(target)
    return target
