"""Embedding stage: pluggable backends plus a binary vector store."""

from .backends import (
    EmbeddingBackend,
    MockBackend,
    decode_image,
    embed_images,
    embed_texts,
    get_backend,
)
from .store import (
    EmbeddingStore,
    meta_path,
    normalize,
    read_store,
    write_store,
)

__all__ = [
    "EmbeddingBackend",
    "EmbeddingStore",
    "MockBackend",
    "decode_image",
    "embed_images",
    "embed_texts",
    "get_backend",
    "meta_path",
    "normalize",
    "read_store",
    "write_store",
]
