"""Builds a tiny local CLIP checkpoint so the exporter runs offline."""

import json
import sys
from pathlib import Path

import pytest
import torch
from transformers import CLIPConfig, CLIPImageProcessor, CLIPModel, CLIPTokenizer

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def _byte_unicode_chars() -> list[str]:
    # GPT-2 byte-to-unicode table: printable bytes map to themselves, the
    # rest shift into a private range
    bs = (
        list(range(ord("!"), ord("~") + 1))
        + list(range(ord("\xa1"), ord("\xac") + 1))
        + list(range(ord("\xae"), ord("\xff") + 1))
    )
    cs = bs[:]
    n = 0
    for b in range(256):
        if b not in bs:
            bs.append(b)
            cs.append(256 + n)
            n += 1
    return [chr(c) for c in cs]


def build_tiny_checkpoint(target: Path) -> Path:
    """Random-weight CLIP small enough for second-scale tests: full byte
    coverage in the vocab so any ASCII text tokenizes, three merges to
    exercise the BPE path, 32px images with 8px patches."""
    vocab = {"<|startoftext|>": 0, "<|endoftext|>": 1}
    for ch in _byte_unicode_chars():
        vocab[ch] = len(vocab)
        vocab[ch + "</w>"] = len(vocab)
    for merged in ("he", "lo</w>", "hel"):
        vocab[merged] = len(vocab)
    merges = [("h", "e"), ("l", "o</w>"), ("he", "l")]

    tokenizer = CLIPTokenizer(vocab=vocab, merges=merges, model_max_length=16)
    tokenizer.save_pretrained(str(target))

    torch.manual_seed(0)
    config = CLIPConfig(
        text_config=dict(
            vocab_size=len(vocab),
            hidden_size=32,
            intermediate_size=64,
            num_hidden_layers=2,
            num_attention_heads=4,
            max_position_embeddings=16,
            bos_token_id=0,
            eos_token_id=1,
            hidden_act="quick_gelu",
        ),
        vision_config=dict(
            hidden_size=24,
            intermediate_size=48,
            num_hidden_layers=2,
            num_attention_heads=3,
            image_size=32,
            patch_size=8,
            hidden_act="quick_gelu",
        ),
        projection_dim=16,
    )
    model = CLIPModel(config)
    model.eval()
    model.save_pretrained(str(target))
    processor = CLIPImageProcessor(
        size={"shortest_edge": 32}, crop_size={"height": 32, "width": 32}
    )
    processor.save_pretrained(str(target))
    return target


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory) -> str:
    return str(build_tiny_checkpoint(tmp_path_factory.mktemp("ckpt")))


@pytest.fixture(scope="session")
def exported_dir(tiny_checkpoint, tmp_path_factory):
    """One shared export (with self-check) for the read-only assertions."""
    import export_model

    out = tmp_path_factory.mktemp("export")
    manifest = export_model.export(tiny_checkpoint, out)
    return out, manifest


def read_manifest(export_dir: Path) -> dict:
    return json.loads((Path(export_dir) / "model.json").read_text(encoding="utf-8"))
