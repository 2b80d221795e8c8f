"""Backend that runs an exported vision-language checkpoint with numpy.

The export directory holds ``model.json`` (architecture and preprocessing
constants), ``text_encoder.npz`` / ``image_encoder.npz`` weight archives
keyed by the upstream parameter names, and ``vocab.json`` / ``merges.txt``
for the byte-level BPE tokenizer. Inference is plain float32 numpy, so the
backend is deterministic and needs no deep-learning framework at runtime.
"""

from __future__ import annotations

import json
import unicodedata
from functools import lru_cache
from pathlib import Path

import numpy as np
import regex
from PIL import Image
from scipy.special import erf

from ..errors import BackendFailure, FormatError
from .backends import EmbeddingBackend
from .store import normalize

_SPLIT_PATTERN = regex.compile(
    r"""<\|startoftext\|>|<\|endoftext\|>|'s|'t|'re|'ve|'m|'ll|'d|[\p{L}]+|[\p{N}]|[^\s\p{L}\p{N}]+"""
)


@lru_cache(maxsize=1)
def _byte_encoder() -> dict[int, str]:
    # GPT-2 byte-to-unicode table: printable bytes map to themselves,
    # the rest get shifted into a private range.
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
    return dict(zip(bs, (chr(c) for c in cs)))


class BpeTokenizer:
    """Byte-level BPE with an end-of-word suffix, matching the exported
    checkpoint's tokenizer files."""

    def __init__(self, vocab_path, merges_path, bos_id: int, eos_id: int):
        with open(vocab_path, encoding="utf-8") as fh:
            self.vocab: dict[str, int] = json.load(fh)
        self.ranks: dict[tuple[str, str], int] = {}
        with open(merges_path, encoding="utf-8") as fh:
            rank = 0
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#version"):
                    continue
                first, second = line.split()
                self.ranks[(first, second)] = rank
                rank += 1
        self.bos_id = bos_id
        self.eos_id = eos_id
        self.unk_id = eos_id
        self._cache: dict[str, list[int]] = {}

    def _bpe(self, piece: str) -> list[int]:
        if piece in self._cache:
            return self._cache[piece]
        word = tuple(piece[:-1]) + (piece[-1] + "</w>",)
        while len(word) > 1:
            pairs = {(word[i], word[i + 1]) for i in range(len(word) - 1)}
            best = min(pairs, key=lambda p: self.ranks.get(p, 1 << 30))
            if best not in self.ranks:
                break
            first, second = best
            merged = []
            i = 0
            while i < len(word):
                if i < len(word) - 1 and word[i] == first and word[i + 1] == second:
                    merged.append(first + second)
                    i += 2
                else:
                    merged.append(word[i])
                    i += 1
            word = tuple(merged)
        ids = [self.vocab.get(tok, self.unk_id) for tok in word]
        self._cache[piece] = ids
        return ids

    def encode(self, text: str, context_length: int) -> list[int]:
        """Tokenize into bos + body + eos, truncated to context_length."""
        text = unicodedata.normalize("NFC", text)
        text = regex.sub(r"\s+", " ", text).lower()
        enc = _byte_encoder()
        body: list[int] = []
        for piece in _SPLIT_PATTERN.findall(text):
            byte_level = "".join(enc[b] for b in piece.encode("utf-8"))
            body.extend(self._bpe(byte_level))
        body = body[: context_length - 2]
        return [self.bos_id] + body + [self.eos_id]


def _layer_norm(x: np.ndarray, weight, bias, eps: float) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps) * weight + bias


def _quick_gelu(x: np.ndarray) -> np.ndarray:
    return x * (1.0 / (1.0 + np.exp(-1.702 * x)))


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / np.sqrt(np.float32(2.0))))

_ACTIVATIONS = {"quick_gelu": _quick_gelu, "gelu": _gelu}


def _softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


class _Transformer:
    """Pre-layer-norm transformer encoder evaluated in float32."""

    def __init__(self, params: dict[str, np.ndarray], prefix: str, cfg: dict):
        self.p = params
        self.prefix = prefix
        self.layers = int(cfg["layers"])
        self.heads = int(cfg["heads"])
        self.eps = float(cfg["layer_norm_eps"])
        self.act = _ACTIVATIONS[cfg["hidden_act"]]

    def _w(self, name: str) -> np.ndarray:
        return self.p[f"{self.prefix}.{name}"]

    def _attention(self, x: np.ndarray, layer: int, causal: bool) -> np.ndarray:
        base = f"encoder.layers.{layer}.self_attn"
        length, width = x.shape
        head_dim = width // self.heads
        scale = np.float32(head_dim**-0.5)

        def proj(kind: str) -> np.ndarray:
            out = x @ self._w(f"{base}.{kind}_proj.weight").T
            out += self._w(f"{base}.{kind}_proj.bias")
            return out.reshape(length, self.heads, head_dim)

        q = proj("q") * scale
        k = proj("k")
        v = proj("v")
        scores = np.einsum("qhd,khd->hqk", q, k)
        if causal:
            mask = np.triu(np.full((length, length), -np.inf, dtype=np.float32), k=1)
            scores = scores + mask
        ctx = np.einsum("hqk,khd->qhd", _softmax(scores), v).reshape(length, width)
        return ctx @ self._w(f"{base}.out_proj.weight").T + self._w(
            f"{base}.out_proj.bias"
        )

    def _mlp(self, x: np.ndarray, layer: int) -> np.ndarray:
        base = f"encoder.layers.{layer}.mlp"
        h = x @ self._w(f"{base}.fc1.weight").T + self._w(f"{base}.fc1.bias")
        h = self.act(h)
        return h @ self._w(f"{base}.fc2.weight").T + self._w(f"{base}.fc2.bias")

    def run(self, x: np.ndarray, causal: bool) -> np.ndarray:
        for layer in range(self.layers):
            base = f"encoder.layers.{layer}"
            h = _layer_norm(
                x,
                self._w(f"{base}.layer_norm1.weight"),
                self._w(f"{base}.layer_norm1.bias"),
                self.eps,
            )
            x = x + self._attention(h, layer, causal)
            h = _layer_norm(
                x,
                self._w(f"{base}.layer_norm2.weight"),
                self._w(f"{base}.layer_norm2.bias"),
                self.eps,
            )
            x = x + self._mlp(h, layer)
        return x


class InterchangeBackend(EmbeddingBackend):
    """Loads an export directory produced by the model-export tool."""

    name = "model"
    modalities = frozenset({"text", "image"})

    def __init__(self, model_dir):
        self.dir = Path(model_dir)
        manifest_path = self.dir / "model.json"
        if not manifest_path.exists():
            raise FormatError(f"no model.json in {self.dir}")
        with open(manifest_path, encoding="utf-8") as fh:
            self.manifest = json.load(fh)
        if self.manifest.get("format_version") != 1:
            raise FormatError(
                f"unsupported export format {self.manifest.get('format_version')!r}"
            )
        self.dim = int(self.manifest["dim"])
        text_cfg = self.manifest["text"]
        vision_cfg = self.manifest["vision"]
        self._text_params = self._load_npz("text_encoder.npz")
        self._vision_params = self._load_npz("image_encoder.npz")
        self._text = _Transformer(self._text_params, "text_model", text_cfg)
        self._vision = _Transformer(self._vision_params, "vision_model", vision_cfg)
        self._text_cfg = text_cfg
        self._vision_cfg = vision_cfg
        self._pre = self.manifest["preprocessing"]
        self.tokenizer = BpeTokenizer(
            self.dir / "vocab.json",
            self.dir / "merges.txt",
            bos_id=int(text_cfg["bos_token_id"]),
            eos_id=int(text_cfg["eos_token_id"]),
        )

    def _load_npz(self, filename: str) -> dict[str, np.ndarray]:
        path = self.dir / filename
        if not path.exists():
            raise FormatError(f"missing {filename} in {self.dir}")
        with np.load(path) as archive:
            return {key: archive[key].astype(np.float32) for key in archive.files}

    # --- text ---------------------------------------------------------

    def embed_text(self, text: str) -> np.ndarray:
        ids = self.tokenizer.encode(text, int(self._text_cfg["context_length"]))
        p = self._text_params
        x = p["text_model.embeddings.token_embedding.weight"][ids]
        x = x + p["text_model.embeddings.position_embedding.weight"][: len(ids)]
        x = self._text.run(x, causal=True)
        x = _layer_norm(
            x,
            p["text_model.final_layer_norm.weight"],
            p["text_model.final_layer_norm.bias"],
            self._text.eps,
        )
        pooled = x[ids.index(self.tokenizer.eos_id)]
        features = pooled @ p["text_projection.weight"].T
        return normalize(features)

    # --- image --------------------------------------------------------

    def _preprocess(self, image: Image.Image) -> np.ndarray:
        """Resize shorter side, center-crop, rescale, standardize; CHW."""
        size = int(self._pre["resize_shortest"])
        crop = int(self._pre["crop"])
        image = image.convert("RGB")
        w, h = image.size
        short, long = (h, w) if h <= w else (w, h)
        new_short, new_long = size, int(size * long / short)
        new_h, new_w = (new_short, new_long) if h <= w else (new_long, new_short)
        if (new_w, new_h) != (w, h):
            image = image.resize((new_w, new_h), Image.Resampling.BICUBIC)
        left = (new_w - crop) // 2
        top = (new_h - crop) // 2
        image = image.crop((left, top, left + crop, top + crop))
        pixels = np.asarray(image, dtype=np.float32) / np.float32(255.0)
        mean = np.asarray(self._pre["mean"], dtype=np.float32)
        std = np.asarray(self._pre["std"], dtype=np.float32)
        pixels = (pixels - mean) / std
        return pixels.transpose(2, 0, 1)

    def embed_image(self, image: Image.Image) -> np.ndarray:
        p = self._vision_params
        pixels = self._preprocess(image)
        patch = int(self._vision_cfg["patch_size"])
        channels, height, width = pixels.shape
        if height % patch or width % patch:
            raise BackendFailure(
                f"image size {height}x{width} not divisible by patch {patch}"
            )
        grid_h, grid_w = height // patch, width // patch
        patches = (
            pixels.reshape(channels, grid_h, patch, grid_w, patch)
            .transpose(1, 3, 0, 2, 4)
            .reshape(grid_h * grid_w, channels * patch * patch)
        )
        kernel = p["vision_model.embeddings.patch_embedding.weight"]
        patch_embeds = patches @ kernel.reshape(kernel.shape[0], -1).T
        cls = p["vision_model.embeddings.class_embedding"][None, :]
        x = np.concatenate([cls, patch_embeds], axis=0)
        x = x + p["vision_model.embeddings.position_embedding.weight"][: x.shape[0]]
        x = _layer_norm(
            x,
            p["vision_model.pre_layrnorm.weight"],
            p["vision_model.pre_layrnorm.bias"],
            self._vision.eps,
        )
        x = self._vision.run(x, causal=False)
        pooled = _layer_norm(
            x[0],
            p["vision_model.post_layernorm.weight"],
            p["vision_model.post_layernorm.bias"],
            self._vision.eps,
        )
        features = pooled @ p["visual_projection.weight"].T
        return normalize(features)
