"""Embedding backends mapping text and images into one shared vector space.

Two implementations ship with the package: :class:`MockBackend`, a fully
deterministic hashing embedder used throughout the test suite and for
offline smoke runs, and the interchange-model backend (see
``interchange.py``) that loads an exported vision-language checkpoint.
"""

from __future__ import annotations

import hashlib
import io

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..errors import BackendFailure, ImageDecodeError, InvalidInput
from .store import normalize


class EmbeddingBackend:
    """Shared-space embedder. Deterministic: same input, same vector."""

    name: str = "base"
    dim: int = 0
    modalities: frozenset[str] = frozenset()

    def embed_text(self, text: str) -> np.ndarray:
        raise NotImplementedError

    def embed_image(self, image: Image.Image) -> np.ndarray:
        raise NotImplementedError


def embed_texts(backend: EmbeddingBackend, texts: list[str]) -> np.ndarray:
    """Embed cleaned texts; returns a (len(texts), dim) float32 matrix."""
    if "text" not in backend.modalities:
        raise InvalidInput(f"backend {backend.name!r} does not embed text")
    if not texts:
        raise InvalidInput("texts must be a non-empty list")
    out = np.empty((len(texts), backend.dim), dtype=np.float32)
    for i, text in enumerate(texts):
        try:
            out[i] = backend.embed_text(text)
        except Exception as exc:
            raise BackendFailure(f"text embedding failed: {exc}", index=i) from exc
    return out


def embed_images(backend: EmbeddingBackend, images: list[Image.Image]) -> np.ndarray:
    """Embed decoded RGB images into the same space as text vectors."""
    if "image" not in backend.modalities:
        raise InvalidInput(f"backend {backend.name!r} does not embed images")
    if not images:
        raise InvalidInput("images must be a non-empty list")
    out = np.empty((len(images), backend.dim), dtype=np.float32)
    for i, image in enumerate(images):
        try:
            out[i] = backend.embed_image(image)
        except Exception as exc:
            raise BackendFailure(f"image embedding failed: {exc}", index=i) from exc
    return out


def decode_image(source) -> Image.Image:
    """Decode a path or raw bytes into an RGB image."""
    try:
        if isinstance(source, (bytes, bytearray)):
            img = Image.open(io.BytesIO(source))
        else:
            img = Image.open(source)
        return img.convert("RGB")
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ImageDecodeError(f"cannot decode image: {exc}") from exc


class MockBackend(EmbeddingBackend):
    """Character 3-gram hashing embedder.

    Signed feature hashing over character 3-grams (with start/end
    sentinels) gives nearby vectors for nearby strings, which is all the
    classifier and projection test suites need. Hashing goes through md5,
    so vectors are bit-identical across platforms and processes. Images
    are shrunk to a 32x32 RGB thumbnail and hashed the same way over
    pixel-byte triples.
    """

    name = "mock"
    modalities = frozenset({"text", "image"})

    _THUMB = 32

    def __init__(self, dim: int = 768):
        if dim <= 0:
            raise InvalidInput("dim must be positive")
        self.dim = dim

    def _bucketize(self, grams) -> np.ndarray:
        v = np.zeros(self.dim, dtype=np.float64)
        for gram in grams:
            digest = hashlib.md5(gram).digest()
            idx = int.from_bytes(digest[:8], "little") % self.dim
            v[idx] += 1.0 if digest[8] & 1 else -1.0
        if not v.any():
            # Signed buckets can cancel on tiny inputs; pin a fallback.
            v[0] = 1.0
        return normalize(v)

    def embed_text(self, text: str) -> np.ndarray:
        padded = "\x02" + text + "\x03"
        grams = [padded[i : i + 3] for i in range(len(padded) - 2)] or [padded]
        return self._bucketize(g.encode("utf-8") for g in grams)

    def embed_image(self, image: Image.Image) -> np.ndarray:
        thumb = image.convert("RGB").resize(
            (self._THUMB, self._THUMB), Image.Resampling.NEAREST
        )
        data = thumb.tobytes()
        grams = [b"img\x00" + data[i : i + 3] for i in range(0, len(data) - 2, 3)]
        return self._bucketize(grams)


def get_backend(kind: str, *, dim: int = 768, model_dir=None) -> EmbeddingBackend:
    """Construct a backend by name: ``mock`` or ``model``."""
    if kind == "mock":
        return MockBackend(dim=dim)
    if kind == "model":
        if model_dir is None:
            raise InvalidInput("the model backend needs --model <export dir>")
        from .interchange import InterchangeBackend

        return InterchangeBackend(model_dir)
    raise InvalidInput(f"unknown backend {kind!r}")
