"""Clustering of series: feature k-means, DTW k-medoids and random partitions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from .features import FeatureMatrix

METHODS = ("kmeans", "kmeanspp", "kmedoids_dtw", "random")

MAX_LLOYD_ITER = 300
MAX_PAM_SWAPS = 100
ELBOW_RESTARTS = 5


class ClusteringError(ValueError):
    pass


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    k: int
    seed: int
    method: str
    inertia: float
    trace: list[float] = field(default_factory=list, repr=False)
    medoids: np.ndarray | None = field(default=None, repr=False)

    def members(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.labels == c)

    def groups(self) -> list[np.ndarray]:
        return [self.members(c) for c in range(self.k)]


def _check_k(k: int, n: int) -> None:
    if k < 1:
        raise ClusteringError(f"k must be positive, got {k}")
    if k > n:
        raise ClusteringError(f"k={k} exceeds the number of items ({n})")


def _sq_dists(X: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def _plusplus_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centres = [int(rng.integers(n))]
    d2 = ((X - X[centres[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            remaining = np.setdiff1d(np.arange(n), centres)
            nxt = int(rng.choice(remaining))
        else:
            nxt = int(rng.choice(n, p=d2 / total))
        centres.append(nxt)
        d2 = np.minimum(d2, ((X - X[nxt]) ** 2).sum(axis=1))
    return X[centres].copy()


def kmeans(fm: FeatureMatrix | np.ndarray, k: int, seed: int, init: str = "random") -> ClusterAssignment:
    """Lloyd's algorithm from random or k-means++ starting centroids.

    ``trace`` records the within-cluster sum of squares after every
    assignment step; it never increases.
    """
    X = np.asarray(fm.rows if isinstance(fm, FeatureMatrix) else fm, dtype=float)
    n = len(X)
    _check_k(k, n)
    if init not in ("random", "plusplus"):
        raise ClusteringError(f"unknown init {init!r}")
    rng = np.random.default_rng(seed)
    if init == "plusplus":
        centroids = _plusplus_init(X, k, rng)
    else:
        centroids = X[rng.choice(n, size=k, replace=False)].copy()
    labels = None
    trace: list[float] = []
    for _ in range(MAX_LLOYD_ITER):
        d2 = _sq_dists(X, centroids)
        new_labels = d2.argmin(axis=1)
        trace.append(float(d2[np.arange(n), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        own = d2[np.arange(n), labels]
        for c in range(k):
            mask = labels == c
            if mask.any():
                centroids[c] = X[mask].mean(axis=0)
            else:
                # empty cluster: restart it on the worst-fitted point
                far = int(own.argmax())
                centroids[c] = X[far]
                own[far] = 0.0
    d2 = _sq_dists(X, centroids)
    inertia = float(d2[np.arange(n), labels].sum())
    method = "kmeanspp" if init == "plusplus" else "kmeans"
    return ClusterAssignment(labels.astype(int), k, seed, method, inertia, trace)


@njit(cache=True)
def _dtw(a, b):
    n, m = a.shape[0], b.shape[0]
    prev = np.empty(m)
    cur = np.empty(m)
    prev[0] = abs(a[0] - b[0])
    for j in range(1, m):
        prev[j] = prev[j - 1] + abs(a[0] - b[j])
    for i in range(1, n):
        cur[0] = prev[0] + abs(a[i] - b[0])
        for j in range(1, m):
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = best + abs(a[i] - b[j])
        prev, cur = cur, prev
    return prev[m - 1]


def dtw_distance(a, b) -> float:
    """Unconstrained DTW with absolute-difference local cost."""
    a = np.ascontiguousarray(a, dtype=float)
    b = np.ascontiguousarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ClusteringError("DTW needs nonempty sequences")
    if a.size < b.size:
        a, b = b, a
    return float(_dtw(a, b))


def dtw_matrix(series: Sequence[np.ndarray]) -> np.ndarray:
    n = len(series)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            D[i, j] = D[j, i] = dtw_distance(series[i], series[j])
    return D


def pam(D: np.ndarray, k: int, seed: int) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """PAM build + best-improvement swap over a distance matrix.

    The seed only fixes the candidate scan order, which decides ties.
    """
    n = len(D)
    _check_k(k, n)
    order = np.random.default_rng(seed).permutation(n)
    medoids: list[int] = []
    nearest = np.full(n, np.inf)
    for _ in range(k):
        best, best_cost = -1, np.inf
        for c in order:
            if c in medoids:
                continue
            cost = np.minimum(nearest, D[c]).sum()
            if cost < best_cost:
                best, best_cost = int(c), cost
        medoids.append(best)
        nearest = np.minimum(nearest, D[best])
    trace = [float(nearest.sum())]
    for _ in range(MAX_PAM_SWAPS):
        current = trace[-1]
        best_swap, best_cost = None, current
        for mi in range(k):
            others = medoids[:mi] + medoids[mi + 1 :]
            base = D[others].min(axis=0) if others else np.full(n, np.inf)
            for c in order:
                if c in medoids:
                    continue
                cost = np.minimum(base, D[c]).sum()
                if cost < best_cost - 1e-12 * max(1.0, current):
                    best_swap, best_cost = (mi, int(c)), cost
        if best_swap is None:
            break
        medoids[best_swap[0]] = best_swap[1]
        trace.append(float(D[medoids].min(axis=0).sum()))
    med = np.array(medoids)
    labels = D[med].argmin(axis=0)
    labels[med] = np.arange(k)
    return med, labels, trace


def kmedoids_dtw(series: Sequence[np.ndarray], k: int, seed: int, distances: np.ndarray | None = None) -> ClusterAssignment:
    _check_k(k, len(series))
    D = dtw_matrix(series) if distances is None else distances
    med, labels, trace = pam(D, k, seed)
    return ClusterAssignment(labels.astype(int), k, seed, "kmedoids_dtw", trace[-1], trace, med)


def random_partition(ids: Sequence[str] | int, k: int, seed: int) -> ClusterAssignment:
    n = ids if isinstance(ids, int) else len(ids)
    _check_k(k, n)
    labels = np.random.default_rng(seed).integers(0, k, size=n)
    counts = np.bincount(labels, minlength=k)
    for c in range(k):
        if counts[c] == 0:
            donor = int(counts.argmax())
            moved = np.flatnonzero(labels == donor)[-1]
            labels[moved] = c
            counts[donor] -= 1
            counts[c] += 1
    return ClusterAssignment(labels.astype(int), k, seed, "random", 0.0)


def restart_seeds(seed: int, n: int = ELBOW_RESTARTS) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]


def best_of_restarts(fm: FeatureMatrix, k: int, seed: int, init: str, n_restarts: int = ELBOW_RESTARTS) -> ClusterAssignment:
    runs = [kmeans(fm, k, s, init) for s in restart_seeds(seed, n_restarts)]
    return min(runs, key=lambda r: r.inertia)


def chord_elbow(ks: Sequence[int], wcss: Sequence[float]) -> int:
    """k whose (k, WCSS) point is farthest from the end-to-end chord; ties go to the smaller k."""
    ks = np.asarray(ks, dtype=float)
    w = np.asarray(wcss, dtype=float)
    if len(ks) <= 2:
        return int(ks[0])
    dx, dy = ks[-1] - ks[0], w[-1] - w[0]
    dist = np.abs(dy * (ks - ks[0]) - dx * (w - w[0])) / np.hypot(dx, dy)
    tol = 1e-9 * max(1.0, float(np.abs(w).max()))
    return int(ks[np.flatnonzero(dist >= dist.max() - tol)[0]])


def elbow_optimal_k(fm: FeatureMatrix, k_range: tuple[int, int], seed: int, init: str = "random") -> int:
    lo, hi = k_range
    n = len(fm.rows)
    if lo < 1 or hi < lo or hi > n:
        raise ClusteringError(f"invalid k range {k_range} for {n} rows")
    ks = list(range(lo, hi + 1))
    wcss = [best_of_restarts(fm, k, seed, init).inertia for k in ks]
    return chord_elbow(ks, wcss)
