"""Truncated SVD of sparse matrices and k-means with restarts."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

OVERSAMPLE = 10
POWER_ITERS = 7
MAX_POWER_ITERS = 200
MAX_LLOYD = 300


@dataclass
class ProjectionPair:
    U: np.ndarray
    V: np.ndarray
    s: np.ndarray

    @property
    def rank(self) -> int:
        return len(self.s)


def truncated_svd(matrix, k: int, seed: int = 0, oversample: int = OVERSAMPLE,
                  power_iters: int = POWER_ITERS, tol: float = 1e-12) -> ProjectionPair:
    """Rank-k SVD by a randomized range finder with power iterations.

    At least ``power_iters`` iterations run; more follow until the captured
    energy of the top k singular values changes by less than ``tol``
    (relative).

    When ``k + oversample`` covers the smaller dimension the sketch spans the
    whole range and the result is exact up to rounding.
    """
    A = sp.csr_matrix(matrix, dtype=np.float64)
    d, dp = A.shape
    if not 1 <= k <= min(d, dp):
        raise ValueError(f"rank k={k} out of range for a {d}x{dp} matrix")
    ell = min(k + oversample, min(d, dp))
    rng = np.random.default_rng(seed)
    At = A.T.tocsr()
    Q, _ = np.linalg.qr(A @ rng.standard_normal((dp, ell)))
    prev = None
    for it in range(MAX_POWER_ITERS):
        if it >= power_iters:
            B = np.asarray((At @ Q).T)  # ell x dp
            Ub, s, Vt = np.linalg.svd(B, full_matrices=False)
            energy = float((s[:k] ** 2).sum())
            if prev is not None and abs(energy - prev) <= tol * max(energy, 1e-300):
                break
            prev = energy
        Q, _ = np.linalg.qr(At @ Q)
        Q, _ = np.linalg.qr(A @ Q)
    B = np.asarray((At @ Q).T)
    Ub, s, Vt = np.linalg.svd(B, full_matrices=False)
    U = Q @ Ub[:, :k]
    V = Vt[:k].T
    s = s[:k]
    # sign convention: largest-magnitude entry of each U column positive
    pivot = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[pivot, np.arange(k)])
    signs[signs == 0] = 1.0
    return ProjectionPair(U * signs, V * signs, s)


@dataclass
class ClusteringResult:
    centroids: np.ndarray
    assignment: np.ndarray
    objective: float
    history: list[float]

    @property
    def m(self) -> int:
        return len(self.centroids)

    def predict(self, points: np.ndarray) -> np.ndarray:
        return _nearest(np.asarray(points, dtype=np.float64), self.centroids)[0]


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    # direct differences, not the |x|^2 - 2xc + |c|^2 expansion: the Lloyd
    # monotonicity check compares these values exactly
    D = np.empty((len(X), len(C)))
    for h, c in enumerate(C):
        diff = X - c
        D[:, h] = np.einsum("ij,ij->i", diff, diff)
    return D


def _nearest(X, C):
    D = _sq_dists(X, C)
    lab = D.argmin(axis=1)
    return lab, D[np.arange(len(X)), lab]


def objective(X: np.ndarray, centroids: np.ndarray, assignment: np.ndarray) -> float:
    diff = X - centroids[assignment]
    return float(np.einsum("ij,ij->i", diff, diff).sum())


def _plusplus(X: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centers = [X[rng.integers(n)]]
    closest = ((X - centers[0]) ** 2).sum(1)
    for _ in range(1, m):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(X[idx])
        closest = np.minimum(closest, ((X - X[idx]) ** 2).sum(1))
    return np.array(centers)


def lloyd(X: np.ndarray, init: np.ndarray, max_iter: int = MAX_LLOYD,
          hook: Callable[[int, float], None] | None = None) -> ClusteringResult:
    """Lloyd iterations until the assignment stops changing.

    Empty clusters are re-seeded with the point farthest from its centroid.
    """
    C = init.astype(np.float64, copy=True)
    m = len(C)
    lab, dist = _nearest(X, C)
    history = []
    for it in range(max_iter):
        sizes = np.bincount(lab, minlength=m)
        for h in np.flatnonzero(sizes == 0):
            donors = np.where(sizes[lab] > 1, dist, -1.0)
            far = int(np.argmax(donors))
            sizes[lab[far]] -= 1
            sizes[h] += 1
            lab[far] = h
            dist[far] = 0.0
        for h in range(m):
            C[h] = X[lab == h].mean(axis=0)
        obj = objective(X, C, lab)
        history.append(obj)
        if hook is not None:
            hook(it, obj)
        new_lab, dist = _nearest(X, C)
        # keep the current cluster on exact ties so the fixpoint is stable
        diff = X - C[lab]
        cur = np.einsum("ij,ij->i", diff, diff)
        keep = cur <= dist
        new_lab = np.where(keep, lab, new_lab)
        dist = np.where(keep, cur, dist)
        if np.array_equal(new_lab, lab):
            break
        lab = new_lab
    return ClusteringResult(C, lab, objective(X, C, lab), history)


def kmeans(points, m: int, restarts: int = 10, seed: int = 0,
           hook: Callable[[int, float], None] | None = None) -> ClusteringResult:
    """Best-of-``restarts`` k-means++ / Lloyd clustering.

    If ``m`` exceeds the number of distinct points, that number of clusters
    is used instead.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if m < 1 or len(X) == 0:
        raise ValueError("kmeans needs m >= 1 and at least one point")
    distinct = len(np.unique(X, axis=0))
    m = min(m, distinct)
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        run = lloyd(X, _plusplus(X, m, rng), hook=hook)
        if best is None or run.objective < best.objective:
            best = run
    return best
