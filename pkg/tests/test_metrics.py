import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modguard.errors import InvalidInput, LengthMismatch, SingleClass
from modguard.metrics import ConfusionCounts, confusion, prf1, roc_auc, roc_table


# --- confusion: exhaustive against a brute-force definition ---


def test_confusion_exhaustive_small():
    for n in range(1, 7):
        for y in itertools.product((0, 1), repeat=n):
            for p in itertools.product((0, 1), repeat=n):
                c = confusion(y, p)
                assert c.tp == sum(a == 1 and b == 1 for a, b in zip(y, p))
                assert c.fp == sum(a == 0 and b == 1 for a, b in zip(y, p))
                assert c.tn == sum(a == 0 and b == 0 for a, b in zip(y, p))
                assert c.fn == sum(a == 1 and b == 0 for a, b in zip(y, p))
                assert c.total == n


def test_confusion_rejects_nonbinary_and_empty():
    with pytest.raises(InvalidInput):
        confusion([0, 2], [0, 1])
    with pytest.raises(InvalidInput):
        confusion([], [])
    with pytest.raises(LengthMismatch):
        confusion([0, 1], [0])


# --- prf1 vs exact rational arithmetic ---


def _prf1_fractions(tp, fp, fn):
    precision = Fraction(tp, tp + fp) if tp + fp else Fraction(0)
    recall = Fraction(tp, tp + fn) if tp + fn else Fraction(0)
    if precision + recall == 0:
        f1 = Fraction(0)
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return precision, recall, f1


def test_prf1_matches_rational_oracle_to_20():
    for tp in range(21):
        for fp in range(21):
            for fn in range(21):
                got = prf1(ConfusionCounts(tp=tp, fp=fp, tn=3, fn=fn))
                want_p, want_r, want_f = _prf1_fractions(tp, fp, fn)
                assert abs(got.precision - float(want_p)) < 1e-12
                assert abs(got.recall - float(want_r)) < 1e-12
                assert abs(got.f1 - float(want_f)) < 1e-9
                assert got.degenerate == (
                    tp + fp == 0 or tp + fn == 0 or want_p + want_r == 0
                )


def test_prf1_spot_values():
    got = prf1(ConfusionCounts(tp=8, fp=2, tn=7, fn=3))
    assert got.precision == pytest.approx(0.8)
    assert got.recall == pytest.approx(8 / 11)
    assert got.f1 == pytest.approx(2 * 0.8 * (8 / 11) / (0.8 + 8 / 11))
    assert not got.degenerate


# --- AUC vs the O(n^2) Mann-Whitney statistic ---


def _auc_pairwise(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum((p > q) + 0.5 * (p == q) for p in pos for q in neg)
    return wins / (len(pos) * len(neg))


def test_auc_matches_pairwise_oracle_random():
    rng = np.random.default_rng(3)
    for _ in range(200):
        n = int(rng.integers(2, 40))
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        # quantized scores force plenty of ties
        scores = np.round(rng.normal(size=n), 1)
        _, auc = roc_auc(scores, labels)
        assert auc == pytest.approx(_auc_pairwise(scores, labels), abs=1e-12)


def test_auc_perfect_separation_is_exactly_one():
    labels = [0] * 5 + [1] * 5
    scores = [0.1, 0.2, 0.3, 0.35, 0.4, 0.6, 0.7, 0.8, 0.9, 1.0]
    _, auc = roc_auc(scores, labels)
    assert auc == 1.0


def test_auc_all_tied_is_half():
    _, auc = roc_auc([0.5] * 8, [0, 1] * 4)
    assert auc == 0.5


def test_auc_inverted_is_zero():
    _, auc = roc_auc([0.9, 0.8, 0.1, 0.2], [0, 0, 1, 1])
    assert auc == 0.0


def test_auc_order_permutation_invariant():
    rng = np.random.default_rng(9)
    scores = rng.normal(size=30)
    labels = rng.integers(0, 2, 30)
    labels[: 2] = [0, 1]
    _, base = roc_auc(scores, labels)
    for _ in range(10):
        perm = rng.permutation(30)
        _, shuffled = roc_auc(scores[perm], labels[perm])
        assert shuffled == base


def test_roc_curve_shape():
    scores = [0.9, 0.8, 0.7, 0.6, 0.55, 0.54, 0.53, 0.52, 0.51, 0.505]
    labels = [1, 1, 1, 1, 0, 1, 0, 0, 1, 0]
    points, auc = roc_auc(scores, labels)
    assert points[0] == (0.0, 0.0)
    assert points[-1] == (1.0, 1.0)
    fprs = [p for p, _ in points]
    tprs = [t for _, t in points]
    assert fprs == sorted(fprs)
    assert tprs == sorted(tprs)
    assert 0.0 <= auc <= 1.0


def test_roc_tie_grouping_single_step():
    # one tied block must yield one diagonal step, not an L
    points, _ = roc_auc([0.5, 0.5], [0, 1])
    assert points == [(0.0, 0.0), (1.0, 1.0)]


def test_roc_table_thresholds():
    rows = roc_table([0.2, 0.8], [0, 1])
    assert rows[0][2] == float("inf")
    assert [r[2] for r in rows[1:]] == [0.8, 0.2]
    assert rows[-1][:2] == (1.0, 1.0)


def test_roc_single_class_raises():
    with pytest.raises(SingleClass):
        roc_auc([0.1, 0.9], [1, 1])
    with pytest.raises(SingleClass):
        roc_auc([0.1, 0.9], [0, 0])


def test_roc_rejects_nonfinite_scores():
    with pytest.raises(InvalidInput):
        roc_auc([0.1, float("nan")], [0, 1])


@settings(max_examples=200, deadline=None)
@given(
    st.lists(
        st.tuples(st.integers(0, 1), st.integers(-5, 5)), min_size=2, max_size=25
    ).filter(lambda xs: len({y for y, _ in xs}) == 2)
)
def test_auc_pairwise_property(pairs):
    labels = [y for y, _ in pairs]
    scores = [s / 2 for _, s in pairs]
    _, auc = roc_auc(scores, labels)
    assert auc == pytest.approx(_auc_pairwise(scores, labels), abs=1e-12)
