"""2D/3D layout of embedding sets: PCA baseline and a UMAP-style layout.

The nonlinear pipeline is split into independently testable stages:
exact cosine k-NN, per-point bandwidth calibration, probabilistic-sum
symmetrization, PCA initialization, and an SGD phase with negative
sampling. The SGD kernel carries its own splitmix64 generator so layouts
are reproducible for a given seed whether or not numba is present.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import curve_fit

from .embedding import EmbeddingStore
from .errors import DegenerateInput, DimMismatch, InvalidInput, TooFewPoints

_SMOOTH_FLOOR = 1e-12

_U64_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_U64_M1 = np.uint64(0xBF58476D1CE4E5B9)
_U64_M2 = np.uint64(0x94D049BB133111EB)
_U64_30 = np.uint64(30)
_U64_27 = np.uint64(27)
_U64_31 = np.uint64(31)
_U64_11 = np.uint64(11)
_DOUBLE_UNIT = float(2.0**-53)


@dataclass(frozen=True)
class ProjectionConfig:
    target_dim: int = 3
    n_neighbors: int = 15
    min_dist: float = 0.1
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.target_dim not in (2, 3):
            raise InvalidInput(f"target_dim must be 2 or 3, got {self.target_dim}")
        if self.n_neighbors < 2:
            raise InvalidInput("n_neighbors must be at least 2")
        if self.min_dist < 0:
            raise InvalidInput("min_dist must be non-negative")
        if self.epochs < 1:
            raise InvalidInput("epochs must be positive")


@dataclass(frozen=True)
class Projection:
    coords: np.ndarray
    ids: list

    def __post_init__(self):
        if self.coords.ndim != 2:
            raise InvalidInput("coords must be 2D")
        if not np.isfinite(self.coords).all():
            raise InvalidInput("coords contain NaN or Inf")
        if len(self.ids) != self.coords.shape[0]:
            raise InvalidInput("ids misaligned with coords")


def _rows_of(source) -> np.ndarray:
    rows = source.rows if isinstance(source, EmbeddingStore) else np.asarray(source)
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise InvalidInput("expected a 2D matrix of embeddings")
    return rows


def _ids_of(source, n: int) -> list:
    if isinstance(source, EmbeddingStore):
        return list(source.ids)
    return [str(i) for i in range(n)]


# --- PCA ----------------------------------------------------------------


def pca_components(rows: np.ndarray, d: int):
    """Top-d principal axes of the mean-centered data.

    Returns (components dim x d, all nonzero eigenvalues descending, mean).
    Component signs are fixed by making each axis's largest-magnitude
    entry positive, with argmax ties resolved to the lowest index.
    """
    mean = rows.mean(axis=0)
    centered = rows - mean
    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    eigenvalues = singular**2 / max(rows.shape[0] - 1, 1)
    components = vt[:d].T.copy()
    for col in range(components.shape[1]):
        pivot = np.argmax(np.abs(components[:, col]))
        if components[pivot, col] < 0:
            components[:, col] = -components[:, col]
    return components, eigenvalues, mean


def pca(store, d: int) -> Projection:
    rows = _rows_of(store)
    if rows.shape[0] < 2:
        raise DegenerateInput("PCA needs at least 2 points")
    if not 1 <= d <= rows.shape[1]:
        raise InvalidInput(f"d={d} outside [1, {rows.shape[1]}]")
    components, _, mean = pca_components(rows, d)
    coords = (rows - mean) @ components
    return Projection(coords=coords, ids=_ids_of(store, rows.shape[0]))


# --- UMAP-style pipeline stages ------------------------------------------


def knn_graph(rows: np.ndarray, n_neighbors: int):
    """Exact cosine-distance k-NN. Returns (indices, distances), each
    (n, n_neighbors), self excluded, nearest first."""
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    if (norms == 0).any():
        raise InvalidInput("zero vector has no cosine neighbors")
    unit = rows / norms
    sims = unit @ unit.T
    np.fill_diagonal(sims, -np.inf)
    indices = np.argsort(-sims, axis=1, kind="stable")[:, :n_neighbors]
    gathered = np.take_along_axis(sims, indices, axis=1)
    dists = np.maximum(1.0 - gathered, 0.0)
    return indices, dists


def calibrate_bandwidths(dists: np.ndarray, n_neighbors: int):
    """Per-point (sigma, rho): rho is the nearest-neighbor distance and
    sigma solves sum_j exp(-max(0, d_ij - rho)/sigma) = log2(n_neighbors)
    by 64 fixed bisection steps."""
    n = dists.shape[0]
    target = float(np.log2(n_neighbors))
    rhos = dists[:, 0].copy()
    sigmas = np.empty(n, dtype=np.float64)
    for i in range(n):
        shifted = np.maximum(dists[i] - rhos[i], 0.0)
        lo, hi, mid = 0.0, np.inf, 1.0
        for _ in range(64):
            total = np.exp(-shifted / max(mid, _SMOOTH_FLOOR)).sum()
            if total > target:
                hi = mid
                mid = (lo + hi) / 2.0
            else:
                lo = mid
                mid = mid * 2.0 if hi == np.inf else (lo + hi) / 2.0
        sigmas[i] = max(mid, _SMOOTH_FLOOR)
    return sigmas, rhos


def membership_graph(indices, dists, sigmas, rhos) -> sp.csr_matrix:
    """Directed edge weights exp(-(d - rho)/sigma), symmetrized by the
    probabilistic sum a + b - ab."""
    n = indices.shape[0]
    k = indices.shape[1]
    weights = np.exp(-np.maximum(dists - rhos[:, None], 0.0) / sigmas[:, None])
    rows_idx = np.repeat(np.arange(n), k)
    directed = sp.coo_matrix(
        (weights.ravel(), (rows_idx, indices.ravel())), shape=(n, n)
    ).tocsr()
    transposed = directed.T.tocsr()
    symmetric = directed + transposed - directed.multiply(transposed)
    symmetric.eliminate_zeros()
    return symmetric.tocsr()


def fit_curve_params(min_dist: float):
    """Least-squares (a, b) for 1/(1 + a d^(2b)) against the min_dist
    kernel, 300 samples on [0, 3]."""
    xs = np.linspace(0.0, 3.0, 300)
    ys = np.where(xs <= min_dist, 1.0, np.exp(-(xs - min_dist)))

    def curve(x, a, b):
        return 1.0 / (1.0 + a * x ** (2.0 * b))

    (a, b), _ = curve_fit(curve, xs, ys, p0=(1.0, 1.0), maxfev=10000)
    return float(a), float(b)


def _layout_kernel(coords, heads, tails, weights, epochs, n_neg, a, b, seed):
    n_points = coords.shape[0]
    dim = coords.shape[1]
    n_edges = heads.shape[0]
    state = np.uint64(seed)
    n_u = np.uint64(n_points)
    for epoch in range(epochs):
        alpha = 1.0 - epoch / epochs
        for e in range(n_edges):
            state = state + _U64_GAMMA
            z = state
            z = (z ^ (z >> _U64_30)) * _U64_M1
            z = (z ^ (z >> _U64_27)) * _U64_M2
            z = z ^ (z >> _U64_31)
            if np.float64(z >> _U64_11) * _DOUBLE_UNIT >= weights[e]:
                continue
            i = heads[e]
            j = tails[e]
            dist_sq = 0.0
            for d in range(dim):
                diff = coords[i, d] - coords[j, d]
                dist_sq += diff * diff
            if dist_sq > 0.0:
                coef = (-2.0 * a * b * dist_sq ** (b - 1.0)) / (
                    a * dist_sq**b + 1.0
                )
                for d in range(dim):
                    g = coef * (coords[i, d] - coords[j, d])
                    if g > 4.0:
                        g = 4.0
                    elif g < -4.0:
                        g = -4.0
                    coords[i, d] += alpha * g
                    coords[j, d] -= alpha * g
            for _ in range(n_neg):
                state = state + _U64_GAMMA
                z = state
                z = (z ^ (z >> _U64_30)) * _U64_M1
                z = (z ^ (z >> _U64_27)) * _U64_M2
                z = z ^ (z >> _U64_31)
                k = int(z % n_u)
                if k == i:
                    continue
                dist_sq = 0.0
                for d in range(dim):
                    diff = coords[i, d] - coords[k, d]
                    dist_sq += diff * diff
                if dist_sq > 0.0:
                    coef = (2.0 * b) / (
                        (0.001 + dist_sq) * (a * dist_sq**b + 1.0)
                    )
                    for d in range(dim):
                        g = coef * (coords[i, d] - coords[k, d])
                        if g > 4.0:
                            g = 4.0
                        elif g < -4.0:
                            g = -4.0
                        coords[i, d] += alpha * g
                else:
                    for d in range(dim):
                        coords[i, d] += alpha * 4.0


try:  # pragma: no cover - exercised implicitly wherever numba exists
    from numba import njit

    _layout_kernel_jit = njit(cache=True)(_layout_kernel)
except Exception:  # pragma: no cover
    _layout_kernel_jit = None


def _run_layout(coords, heads, tails, weights, epochs, n_neg, a, b, seed):
    if _layout_kernel_jit is not None:
        _layout_kernel_jit(coords, heads, tails, weights, epochs, n_neg, a, b, seed)
    else:
        with np.errstate(over="ignore"):
            _layout_kernel(coords, heads, tails, weights, epochs, n_neg, a, b, seed)


def umap(store, cfg: ProjectionConfig = ProjectionConfig()) -> Projection:
    rows = _rows_of(store)
    n = rows.shape[0]
    if n <= cfg.n_neighbors:
        raise TooFewPoints(f"need more than {cfg.n_neighbors} points, got {n}")

    indices, dists = knn_graph(rows, cfg.n_neighbors)
    sigmas, rhos = calibrate_bandwidths(dists, cfg.n_neighbors)
    graph = membership_graph(indices, dists, sigmas, rhos).tocoo()

    components, _, mean = pca_components(rows, cfg.target_dim)
    coords = np.ascontiguousarray((rows - mean) @ components, dtype=np.float64)
    rms = float(np.sqrt(np.mean(coords**2)))
    if rms > 0:
        coords /= rms

    a, b = fit_curve_params(cfg.min_dist)
    _run_layout(
        coords,
        graph.row.astype(np.int64),
        graph.col.astype(np.int64),
        graph.data.astype(np.float64),
        cfg.epochs,
        5,
        a,
        b,
        cfg.seed,
    )
    return Projection(coords=coords, ids=_ids_of(store, n))


# --- quality oracle -------------------------------------------------------


def trustworthiness(X, Y, k: int) -> float:
    """Neighborhood-preservation score in [0, 1], Euclidean on both sides.

    Standard rank-displacement form: intruders into the projected k-NN
    are penalized by how far down the original ranking they sit.
    """
    rx = _rows_of(X)
    ry = Y.coords if isinstance(Y, Projection) else np.asarray(Y, dtype=np.float64)
    n = rx.shape[0]
    if ry.shape[0] != n:
        raise DimMismatch(f"{n} inputs vs {ry.shape[0]} projected points")
    if not 1 <= k < n / 2:
        raise InvalidInput(f"k={k} outside [1, n/2) for n={n}")

    def sq_dists(m):
        sq = (m**2).sum(axis=1)
        d = sq[:, None] + sq[None, :] - 2.0 * (m @ m.T)
        np.fill_diagonal(d, -1.0)  # self strictly first even among duplicates
        return d

    order_x = np.argsort(sq_dists(rx), axis=1, kind="stable")
    ranks = np.empty((n, n), dtype=np.int64)
    np.put_along_axis(ranks, order_x, np.broadcast_to(np.arange(n), (n, n)), axis=1)

    order_y = np.argsort(sq_dists(ry), axis=1, kind="stable")
    knn_y = order_y[:, 1 : k + 1]
    displaced = np.take_along_axis(ranks, knn_y, axis=1) - k
    penalty = int(np.maximum(displaced, 0).sum())
    return 1.0 - 2.0 * penalty / (n * k * (2.0 * n - 3.0 * k - 1.0))
