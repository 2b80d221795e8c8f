"""Binary on-disk store for embedding rows plus an id/label sidecar.

Layout: magic ``EMBS``, format version u16, dim u32, count u64 (all
little-endian), then count x dim float32 values row-major. Ids and optional
labels live in a JSONL sidecar at ``<path>.meta`` with one ``{row, id,
label?}`` record per row. Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import FormatError, InvalidInput, ZeroVector

MAGIC = b"EMBS"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIQ")

NORM_TOLERANCE = 1e-5


def normalize(v) -> np.ndarray:
    """Scale a vector to unit L2 norm, returned as float32."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise InvalidInput(f"expected a 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput("vector contains NaN or Inf")
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise ZeroVector("cannot normalize an all-zero vector")
    return (arr / norm).astype(np.float32)


@dataclass
class EmbeddingStore:
    """Aligned (ids, rows) matrix of unit-norm float32 embeddings.

    ``labels`` is optional; when present it is an int array aligned with
    the rows (class 0/1).
    """

    ids: list[str]
    rows: np.ndarray
    labels: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.rows = np.ascontiguousarray(self.rows, dtype=np.float32)
        if self.rows.ndim != 2:
            raise InvalidInput(f"rows must be 2-D, got shape {self.rows.shape}")
        if len(self.ids) != self.rows.shape[0]:
            raise InvalidInput(
                f"{len(self.ids)} ids for {self.rows.shape[0]} rows"
            )
        if len(set(self.ids)) != len(self.ids):
            raise InvalidInput("ids must be unique")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.rows.shape[0],):
                raise InvalidInput("labels must align with rows")

    @property
    def count(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def validate_norms(self, tolerance: float = NORM_TOLERANCE) -> None:
        """Check every row is finite and unit-norm within tolerance."""
        if not np.all(np.isfinite(self.rows)):
            raise InvalidInput("store contains NaN or Inf")
        if self.count:
            norms = np.linalg.norm(self.rows.astype(np.float64), axis=1)
            worst = float(np.max(np.abs(norms - 1.0)))
            if worst > tolerance:
                raise InvalidInput(f"row norm off unit by {worst:.2e}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingStore):
            return NotImplemented
        if self.ids != other.ids or self.rows.shape != other.rows.shape:
            return False
        if not np.array_equal(
            self.rows.view(np.uint32), other.rows.view(np.uint32)
        ):
            return False
        if (self.labels is None) != (other.labels is None):
            return False
        return self.labels is None or np.array_equal(self.labels, other.labels)


def write_store(store: EmbeddingStore, path) -> None:
    """Write the binary matrix and its ``.meta`` sidecar."""
    path = Path(path)
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, store.dim, store.count)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(store.rows.tobytes(order="C"))
    with open(meta_path(path), "w", encoding="utf-8") as fh:
        for row, item_id in enumerate(store.ids):
            record: dict = {"row": row, "id": item_id}
            if store.labels is not None:
                record["label"] = int(store.labels[row])
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def read_store(path) -> EmbeddingStore:
    """Read a store written by :func:`write_store`."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, dim, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    if dim == 0:
        raise FormatError(f"{path}: dim must be positive")
    expected = _HEADER.size + 4 * dim * count
    if len(raw) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes for {count}x{dim}, got {len(raw)}"
        )
    rows = np.frombuffer(
        raw, dtype="<f4", count=count * dim, offset=_HEADER.size
    ).reshape(count, dim)
    ids, labels = _read_meta(meta_path(path), count)
    return EmbeddingStore(ids=ids, rows=rows.copy(), labels=labels)


def meta_path(path) -> Path:
    return Path(str(path) + ".meta")


def _read_meta(path: Path, count: int) -> tuple[list[str], np.ndarray | None]:
    if not path.exists():
        raise FormatError(f"missing sidecar {path}")
    ids: list[str | None] = [None] * count
    labels = np.zeros(count, dtype=np.int64)
    have_labels = count > 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                row = record["row"]
                item_id = record["id"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise FormatError(f"{path} line {lineno}: {exc}") from exc
            if not isinstance(row, int) or not 0 <= row < count:
                raise FormatError(f"{path} line {lineno}: row {row!r} out of range")
            if ids[row] is not None:
                raise FormatError(f"{path} line {lineno}: duplicate row {row}")
            ids[row] = str(item_id)
            if "label" in record:
                labels[row] = int(record["label"])
            else:
                have_labels = False
    if any(item is None for item in ids):
        raise FormatError(f"{path}: sidecar covers fewer rows than the store")
    if len(set(ids)) != count:
        raise FormatError(f"{path}: duplicate ids in sidecar")
    return list(ids), (labels if have_labels else None)  # type: ignore[arg-type]
