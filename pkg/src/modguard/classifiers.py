"""Stage-two classifiers over frozen embeddings.

Three families: logistic regression and a linear SVM trained by seeded
mini-batch (sub)gradient descent, and cosine k-NN with no training at all.
Models are plain dataclasses serialized to JSON; predictions survive a
save/load round trip bit-identically because Python's json module emits
shortest-repr floats.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .embedding import EmbeddingStore
from .errors import (
    DegenerateData,
    DimMismatch,
    EvenK,
    FormatError,
    InvalidInput,
    LengthMismatch,
    UnsupportedKind,
)

MODEL_FORMAT_VERSION = 1
KINDS = ("logistic", "linear_svm", "knn")

# Old-example replay budget per new example; frozen so the incremental
# update behaviour is reproducible.
REPLAY_FACTOR = 4


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    l2: float = 1e-4
    epochs: int = 200
    seed: int = 0
    batch: int = 64
    class_weight: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidInput("learning_rate must be positive")
        if self.l2 < 0:
            raise InvalidInput("l2 must be non-negative")
        if self.epochs < 1:
            raise InvalidInput("epochs must be a positive integer")
        if self.batch < 1:
            raise InvalidInput("batch must be a positive integer")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class KnnData:
    k: int
    instances: np.ndarray
    labels: np.ndarray


@dataclass(frozen=True)
class ClassifierModel:
    kind: str
    dim: int
    weights: np.ndarray | None
    bias: float
    threshold: float
    knn: KnnData | None = None
    metadata: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Prediction:
    score: float
    label: int


def _as_rows(X) -> np.ndarray:
    rows = X.rows if isinstance(X, EmbeddingStore) else np.asarray(X)
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise InvalidInput(f"expected a 2D matrix of embeddings, got ndim={rows.ndim}")
    return rows


def _as_labels(y, count: int) -> np.ndarray:
    labels = np.asarray(y)
    if labels.ndim != 1 or labels.shape[0] != count:
        raise LengthMismatch(f"expected {count} labels, got shape {labels.shape}")
    if not np.isin(labels, (0, 1)).all():
        raise InvalidInput("labels must be 0 or 1")
    return labels.astype(np.int64)


def _sample_weights(y: np.ndarray, balanced: bool) -> np.ndarray:
    if not balanced:
        return np.ones(y.shape[0], dtype=np.float64)
    # n / (2 * n_c): each class contributes half the total loss mass.
    n = y.shape[0]
    weights = np.empty(n, dtype=np.float64)
    for cls in (0, 1):
        mask = y == cls
        if mask.any():
            weights[mask] = n / (2.0 * mask.sum())
    return weights


def logistic_loss_grad(w, b, X, y, l2, sample_weight):
    """L2-regularized weighted mean log-loss and its exact gradient."""
    z = X @ w + b
    losses = np.logaddexp(0.0, z) - y * z
    loss = float(np.mean(sample_weight * losses) + 0.5 * l2 * np.dot(w, w))
    residual = sample_weight * (expit(z) - y)
    grad_w = X.T @ residual / X.shape[0] + l2 * w
    grad_b = float(residual.mean())
    return loss, grad_w, grad_b


def hinge_loss_grad(w, b, X, y, l2, sample_weight):
    """L2-regularized weighted mean hinge loss and a subgradient.

    Labels map to ±1; at the kink (margin exactly 1) the zero subgradient
    is chosen.
    """
    t = 2.0 * y - 1.0
    margins = t * (X @ w + b)
    losses = np.maximum(0.0, 1.0 - margins)
    loss = float(np.mean(sample_weight * losses) + 0.5 * l2 * np.dot(w, w))
    active = (margins < 1.0).astype(np.float64)
    coeff = sample_weight * active * t
    grad_w = -(X.T @ coeff) / X.shape[0] + l2 * w
    grad_b = float(-coeff.mean())
    return loss, grad_w, grad_b


_LOSS_FNS = {"logistic": logistic_loss_grad, "linear_svm": hinge_loss_grad}


def _corpus_hash(rows: np.ndarray, y: np.ndarray) -> str:
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(rows, dtype=np.float64).tobytes())
    digest.update(np.ascontiguousarray(y, dtype=np.int64).tobytes())
    return digest.hexdigest()


def _fit(kind, rows, y, cfg, w0, b0):
    loss_fn = _LOSS_FNS[kind]
    n = rows.shape[0]
    rng = np.random.default_rng(cfg.seed)
    weights = _sample_weights(y, cfg.class_weight)
    w = np.array(w0, dtype=np.float64, copy=True)
    b = float(b0)
    initial, _, _ = loss_fn(w, b, rows, y, cfg.l2, weights)
    history = [initial]
    for epoch in range(cfg.epochs):
        # Linear decay so late epochs take small steps and the per-epoch
        # loss sequence settles instead of oscillating around the optimum.
        lr = cfg.learning_rate * (1.0 - epoch / cfg.epochs)
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch):
            idx = order[start : start + cfg.batch]
            _, grad_w, grad_b = loss_fn(w, b, rows[idx], y[idx], cfg.l2, weights[idx])
            w -= lr * grad_w
            b -= lr * grad_b
        epoch_loss, _, _ = loss_fn(w, b, rows, y, cfg.l2, weights)
        history.append(epoch_loss)
    return w, b, history


def _train_linear(kind, X, y, cfg, threshold):
    rows = _as_rows(X)
    labels = _as_labels(y, rows.shape[0])
    if rows.shape[0] < 2 or np.unique(labels).size < 2:
        raise DegenerateData("training needs at least one example of each class")
    w, b, history = _fit(kind, rows, labels, cfg, np.zeros(rows.shape[1]), 0.0)
    metadata = {
        "seed": cfg.seed,
        "cfg": cfg.to_dict(),
        "train_corpus_hash": _corpus_hash(rows, labels),
        "loss_history": history,
    }
    return ClassifierModel(
        kind=kind,
        dim=rows.shape[1],
        weights=w,
        bias=b,
        threshold=threshold,
        metadata=metadata,
    )


def train_logistic(X, y, cfg: TrainConfig = TrainConfig()) -> ClassifierModel:
    return _train_linear("logistic", X, y, cfg, threshold=0.5)


def train_svm(X, y, cfg: TrainConfig = TrainConfig()) -> ClassifierModel:
    return _train_linear("linear_svm", X, y, cfg, threshold=0.0)


def train_knn(X, y, k: int) -> ClassifierModel:
    rows = _as_rows(X)
    labels = _as_labels(y, rows.shape[0])
    if k % 2 == 0:
        raise EvenK(f"k must be odd, got {k}")
    if not 1 <= k <= rows.shape[0]:
        raise InvalidInput(f"k={k} outside [1, {rows.shape[0]}]")
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    if (norms == 0).any():
        raise DegenerateData("k-NN instances must be non-zero vectors")
    instances = (rows / norms).astype(np.float32)
    metadata = {"train_corpus_hash": _corpus_hash(rows, labels)}
    return ClassifierModel(
        kind="knn",
        dim=rows.shape[1],
        weights=None,
        bias=0.0,
        threshold=0.5,
        knn=KnnData(k=k, instances=instances, labels=labels),
        metadata=metadata,
    )


def decision_scores(model: ClassifierModel, X) -> np.ndarray:
    """Raw scores for a batch: probability, signed margin, or vote share."""
    rows = _as_rows(X)
    if rows.shape[1] != model.dim:
        raise DimMismatch(f"model dim {model.dim}, input dim {rows.shape[1]}")
    if model.kind == "logistic":
        return expit(rows @ model.weights + model.bias)
    if model.kind == "linear_svm":
        return rows @ model.weights + model.bias
    sims = rows @ model.knn.instances.T.astype(np.float64)
    # Stable argsort on negated similarity: equal-similarity neighbours
    # resolve to the lowest training index on every platform.
    nearest = np.argsort(-sims, axis=1, kind="stable")[:, : model.knn.k]
    votes = model.knn.labels[nearest]
    return votes.mean(axis=1)


def predict(model: ClassifierModel, x) -> Prediction:
    vec = np.asarray(x, dtype=np.float64)
    if vec.ndim != 1:
        raise InvalidInput(f"predict takes a single vector, got ndim={vec.ndim}")
    if vec.shape[0] != model.dim:
        raise DimMismatch(f"model dim {model.dim}, input dim {vec.shape[0]}")
    score = float(decision_scores(model, vec[None, :])[0])
    return Prediction(score=score, label=int(score >= model.threshold))


def predict_labels(model: ClassifierModel, X) -> np.ndarray:
    return (decision_scores(model, X) >= model.threshold).astype(np.int64)


def update_incremental(
    model: ClassifierModel,
    X_new,
    y_new,
    replay: EmbeddingStore,
    cfg: TrainConfig = TrainConfig(),
) -> ClassifierModel:
    """Warm-start retrain on new examples plus a seeded replay sample.

    The replay sample holds REPLAY_FACTOR times as many old examples as
    X_new has new ones, drawn by reservoir sampling so the result is
    reproducible for a given seed. Empty X_new is a no-op copy.
    """
    if model.kind == "knn":
        raise UnsupportedKind("incremental update applies to linear kinds only")
    rows_new = np.asarray(X_new.rows if isinstance(X_new, EmbeddingStore) else X_new)
    if rows_new.size == 0:
        return dataclasses.replace(model)
    rows_new = _as_rows(rows_new)
    labels_new = _as_labels(y_new, rows_new.shape[0])
    if rows_new.shape[1] != model.dim:
        raise DimMismatch(f"model dim {model.dim}, new data dim {rows_new.shape[1]}")
    if replay.dim != model.dim:
        raise DimMismatch(f"model dim {model.dim}, replay dim {replay.dim}")
    if replay.labels is None:
        raise InvalidInput("replay store must carry labels")

    rng = np.random.default_rng(cfg.seed)
    budget = min(REPLAY_FACTOR * rows_new.shape[0], replay.count)
    # Algorithm R over the replay rows.
    chosen = list(range(budget))
    for i in range(budget, replay.count):
        j = int(rng.integers(0, i + 1))
        if j < budget:
            chosen[j] = i
    replay_rows = np.asarray(replay.rows[chosen], dtype=np.float64)
    replay_labels = np.asarray(replay.labels)[chosen].astype(np.int64)

    rows = np.concatenate([rows_new, replay_rows], axis=0)
    labels = np.concatenate([labels_new, replay_labels])
    w, b, history = _fit(model.kind, rows, labels, cfg, model.weights, model.bias)
    metadata = {
        "seed": cfg.seed,
        "cfg": cfg.to_dict(),
        "train_corpus_hash": _corpus_hash(rows, labels),
        "loss_history": history,
        "warm_start": True,
    }
    return dataclasses.replace(model, weights=w, bias=b, metadata=metadata)


def save_model(model: ClassifierModel, path) -> None:
    payload = {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": model.kind,
        "dim": model.dim,
        "weights": None if model.weights is None else [float(v) for v in model.weights],
        "bias": float(model.bias),
        "threshold": float(model.threshold),
        "knn": None,
        "metadata": model.metadata,
    }
    if model.knn is not None:
        payload["knn"] = {
            "k": model.knn.k,
            "instances": [[float(v) for v in row] for row in model.knn.instances],
            "labels": [int(v) for v in model.knn.labels],
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_model(path) -> ClassifierModel:
    with open(path, encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"model file is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise FormatError("model file must hold a JSON object")
    if payload.get("format_version") != MODEL_FORMAT_VERSION:
        raise FormatError(f"unsupported model format {payload.get('format_version')!r}")
    kind = payload.get("kind")
    if kind not in KINDS:
        raise FormatError(f"unknown model kind {kind!r}")
    dim = payload.get("dim")
    if not isinstance(dim, int) or dim < 1:
        raise FormatError(f"bad dim {dim!r}")
    weights = payload.get("weights")
    knn = None
    if kind == "knn":
        raw = payload.get("knn")
        if not isinstance(raw, dict):
            raise FormatError("knn model missing instance data")
        try:
            instances = np.asarray(raw.get("instances"), dtype=np.float32)
            labels = np.asarray(raw.get("labels"), dtype=np.int64)
        except (TypeError, ValueError) as exc:
            raise FormatError(f"bad knn arrays: {exc}") from exc
        k = raw.get("k")
        if instances.ndim != 2 or instances.shape[1] != dim:
            raise FormatError("knn instances do not match dim")
        if labels.shape[0] != instances.shape[0]:
            raise FormatError("knn labels misaligned with instances")
        if not isinstance(k, int) or k % 2 == 0 or not 1 <= k <= instances.shape[0]:
            raise FormatError(f"bad k {k!r}")
        knn = KnnData(k=k, instances=instances, labels=labels)
        weights_arr = None
    else:
        if not isinstance(weights, list) or len(weights) != dim:
            raise FormatError("weights do not match dim")
        try:
            weights_arr = np.asarray(weights, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise FormatError(f"bad weights: {exc}") from exc
    try:
        bias = float(payload.get("bias", 0.0))
        threshold = float(payload.get("threshold", 0.5))
    except (TypeError, ValueError) as exc:
        raise FormatError(f"bad scalar field: {exc}") from exc
    return ClassifierModel(
        kind=kind,
        dim=dim,
        weights=weights_arr,
        bias=bias,
        threshold=threshold,
        knn=knn,
        metadata=payload.get("metadata") or {},
    )
