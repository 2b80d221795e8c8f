"""Evaluation: confusion counts, precision/recall/F1, ROC and AUC.

The positive class is label 1 everywhere and metrics are reported for it
(binary, not macro-averaged). AUC uses an integer trapezoid accumulator,
so perfect separation is exactly 1.0 and tied scores follow the
Mann-Whitney half convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .classifiers import ClassifierModel, decision_scores
from .embedding import EmbeddingStore
from .errors import InvalidInput, LengthMismatch, SingleClass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


@dataclass(frozen=True)
class Prf1:
    precision: float
    recall: float
    f1: float
    degenerate: bool


@dataclass(frozen=True)
class EvaluationReport:
    counts: ConfusionCounts
    precision: float
    recall: float
    f1: float
    accuracy: float
    auc: float
    roc: list

    def to_dict(self) -> dict:
        return {
            "counts": self.counts.to_dict(),
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "accuracy": self.accuracy,
            "auc": self.auc,
            "roc": [[fpr, tpr] for fpr, tpr in self.roc],
        }


def _binary_array(values, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise InvalidInput(f"{name} must be a flat sequence")
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise InvalidInput(f"{name} must contain only 0 and 1")
    return arr.astype(np.int64)


def confusion(labels, preds) -> ConfusionCounts:
    y = _binary_array(labels, "labels")
    p = _binary_array(preds, "preds")
    if y.size != p.size:
        raise LengthMismatch(f"{y.size} labels vs {p.size} predictions")
    if y.size == 0:
        raise InvalidInput("need at least one sample")
    return ConfusionCounts(
        tp=int(((y == 1) & (p == 1)).sum()),
        fp=int(((y == 0) & (p == 1)).sum()),
        tn=int(((y == 0) & (p == 0)).sum()),
        fn=int(((y == 1) & (p == 0)).sum()),
    )


def prf1(counts: ConfusionCounts) -> Prf1:
    """Precision/recall/F1 with the zero-denominator-means-zero convention."""
    degenerate = False
    if counts.tp + counts.fp == 0:
        precision, degenerate = 0.0, True
    else:
        precision = counts.tp / (counts.tp + counts.fp)
    if counts.tp + counts.fn == 0:
        recall, degenerate = 0.0, True
    else:
        recall = counts.tp / (counts.tp + counts.fn)
    if precision + recall == 0:
        f1, degenerate = 0.0, True
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return Prf1(precision=precision, recall=recall, f1=f1, degenerate=degenerate)


def _roc_sweep(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = _binary_array(labels, "labels")
    if s.ndim != 1:
        raise InvalidInput("scores must be a flat sequence")
    if s.size != y.size:
        raise LengthMismatch(f"{s.size} scores vs {y.size} labels")
    if not np.isfinite(s).all():
        raise InvalidInput("scores must be finite")
    pos = int((y == 1).sum())
    neg = y.size - pos
    if pos == 0 or neg == 0:
        raise SingleClass("ROC needs both classes present")

    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    points = [(0.0, 0.0)]
    thresholds = [math.inf]
    tp = fp = 0
    area2 = 0  # twice the area in (fp, tp) count space; exact integers
    i = 0
    n = s_sorted.size
    while i < n:
        j = i
        while j < n and s_sorted[j] == s_sorted[i]:
            j += 1
        dtp = int(y_sorted[i:j].sum())
        dfp = (j - i) - dtp
        area2 += dfp * (2 * tp + dtp)
        tp += dtp
        fp += dfp
        points.append((fp / neg, tp / pos))
        thresholds.append(float(s_sorted[i]))
        i = j
    return points, thresholds, area2 / (2 * pos * neg)


def roc_auc(scores, labels):
    """ROC points by descending-threshold sweep (ties grouped) and AUC."""
    points, _, auc = _roc_sweep(scores, labels)
    return points, auc


def roc_table(scores, labels):
    """(fpr, tpr, threshold) rows; the first threshold is +inf."""
    points, thresholds, _ = _roc_sweep(scores, labels)
    return [(fpr, tpr, thr) for (fpr, tpr), thr in zip(points, thresholds)]


def evaluate(model: ClassifierModel, store: EmbeddingStore, labels) -> EvaluationReport:
    """Score a store, then compose confusion, prf1 and roc_auc."""
    y = _binary_array(labels, "labels")
    if y.size != store.count:
        raise LengthMismatch(f"{store.count} embeddings vs {y.size} labels")
    scores = decision_scores(model, store)
    preds = (scores >= model.threshold).astype(np.int64)
    counts = confusion(y, preds)
    quality = prf1(counts)
    points, auc = roc_auc(scores, y)
    return EvaluationReport(
        counts=counts,
        precision=quality.precision,
        recall=quality.recall,
        f1=quality.f1,
        accuracy=(counts.tp + counts.tn) / counts.total,
        auc=auc,
        roc=points,
    )
