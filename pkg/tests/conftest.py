"""Shared synthetic-data builders for the test suite.

The cluster generators are seed-pinned: the acceptance criteria quote
their exact geometry (unit-norm Gaussian clusters with centroid
separation far above the within-class spread).
"""

from __future__ import annotations

import numpy as np
import pytest

# filled by test_acceptance.py; echoed after the run so the per-criterion
# verdict lines survive output capture
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def gaussian_clusters(seed, spec, noise=0.035, dim=64):
    """Unit-norm Gaussian clusters.

    spec: list of (axis, sign, count, label); each cluster sits at
    sign * e_axis before noise and row normalization.
    """
    rng = np.random.default_rng(seed)
    blocks, labels = [], []
    for axis, sign, count, label in spec:
        center = np.zeros(dim)
        center[axis] = sign
        blocks.append(center + rng.normal(0.0, noise, (count, dim)))
        labels.extend([label] * count)
    rows = np.concatenate(blocks)
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    return rows.astype(np.float32), np.asarray(labels)


def two_cluster_set(seed, n_per_class, noise=0.035, dim=64):
    """D1/D2 shape: label-1 cluster at +e1, label-0 cluster at -e1."""
    return gaussian_clusters(
        seed, [(0, 1.0, n_per_class, 1), (0, -1.0, n_per_class, 0)], noise, dim
    )


def stratified_mask(labels, fraction, seed):
    """Boolean train mask, stratified per class, seed-pinned."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    mask = np.zeros(labels.size, dtype=bool)
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        take = int(min(max(round(members.size * fraction), 1), members.size - 1))
        mask[members[rng.permutation(members.size)[:take]]] = True
    return mask


@pytest.fixture
def d1_split():
    """The A3 dataset: 1,000/class, dim 64, 80/20 stratified."""
    rows, labels = two_cluster_set(seed=101, n_per_class=1000)
    mask = stratified_mask(labels, 0.8, seed=202)
    return rows, labels, mask


def malformed_responses(count=1000, seed=0):
    """Fuzz corpus of almost-JSON responses for the array extractor."""
    rng = np.random.default_rng(seed)
    fragments = [
        '["a", "b"',
        '"unterminated',
        "Sure! Here you go: ",
        "```json\n",
        "```",
        "[1, 2,,]",
        "{not: json}",
        "]][[",
        '[{"x": ]}',
        "plain prose with no brackets at all",
        '["ok", "fine"]',
        "[[nested, [deeper",
        '\\"escaped quote [',
        "[null, true,",
        "  \t\n",
        '["\\\\", "\\""]',
    ]
    corpus = []
    for _ in range(count):
        k = int(rng.integers(1, 5))
        picks = [fragments[int(rng.integers(0, len(fragments)))] for _ in range(k)]
        corpus.append(" ".join(picks))
    return corpus
