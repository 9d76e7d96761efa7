"""Partition scalar overlap values into K levels with 1-D k-means.

In one dimension the optimal clusters are contiguous runs of the sorted
values, so the exact optimum is found by dynamic programming over split
points; Lloyd iterations then run from that start (they confirm the fixed
point and guard the non-increasing-SSE invariant). Everything is
deterministic; the ``seed`` argument is kept for API stability only. Labels
are relabeled so that level 0 is the lowest-overlap cluster.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class Partition:
    """Fitted overlap levels: ascending centroids plus per-value labels."""

    centroids: np.ndarray
    labels: np.ndarray
    k: int
    requested_k: int
    n_iter: int

    def __post_init__(self):
        if self.k != self.centroids.shape[0]:
            raise ContractError("k must match the number of centroids")


def _assign(values: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # argmin returns the first minimum, which implements ties-to-lower-index
    return np.abs(values[:, None] - centroids[None, :]).argmin(axis=1)


def _sse(values: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    return float(((values - centroids[labels]) ** 2).sum())


def _optimal_contiguous_means(ordered: np.ndarray, k: int) -> np.ndarray:
    """Cluster means of the SSE-optimal split of sorted values into k runs."""
    n = ordered.size
    prefix = np.concatenate([[0.0], np.cumsum(ordered)])
    prefix_sq = np.concatenate([[0.0], np.cumsum(ordered**2)])

    def run_costs(starts: np.ndarray, end: int) -> np.ndarray:
        # SSE of ordered[s..end] for each start s (inclusive bounds)
        sums = prefix[end + 1] - prefix[starts]
        sqs = prefix_sq[end + 1] - prefix_sq[starts]
        counts = end + 1 - starts
        return sqs - sums * sums / counts

    best = np.full((k + 1, n), np.inf)
    split_at = np.zeros((k + 1, n), dtype=np.int64)
    counts = np.arange(1, n + 1)
    best[1] = prefix_sq[1:] - prefix[1:] ** 2 / counts
    for m in range(2, k + 1):
        for j in range(m - 1, n):
            starts = np.arange(m - 1, j + 1)
            candidates = best[m - 1][starts - 1] + run_costs(starts, j)
            pick = int(candidates.argmin())
            best[m][j] = candidates[pick]
            split_at[m][j] = starts[pick]
    means = np.empty(k)
    j = n - 1
    for m in range(k, 0, -1):
        i = split_at[m][j] if m > 1 else 0
        means[m - 1] = ordered[i : j + 1].mean()
        j = i - 1
    return means


def kmeans_1d(values, k: int, max_iter: int = 100, tol: float = 1e-9, seed: int | None = None) -> Partition:
    """Optimal-start Lloyd clustering; k is clamped to the number of distinct values."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.size == 0:
        raise ContractError("kmeans_1d needs a nonempty 1-D array")
    if not np.all(np.isfinite(values)):
        raise ContractError("kmeans_1d values must be finite")
    if k < 1:
        raise ContractError("k must be >= 1")
    if max_iter < 1:
        raise ContractError("max_iter must be >= 1")
    requested_k = k
    k = min(k, np.unique(values).size)

    centroids = _optimal_contiguous_means(np.sort(values), k)
    labels = _assign(values, centroids)
    prev_sse = _sse(values, centroids, labels)
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        new_centroids = centroids.copy()
        for c in range(k):
            members = values[labels == c]
            if members.size:
                new_centroids[c] = members.mean()
        movement = float(np.abs(new_centroids - centroids).max())
        centroids = new_centroids
        labels = _assign(values, centroids)
        sse = _sse(values, centroids, labels)
        if sse > prev_sse + 1e-12 * max(1.0, prev_sse):
            raise ContractError("within-cluster SSE increased across a Lloyd iteration")
        prev_sse = sse
        if movement <= tol:
            break

    # ascending order, then merge degenerate duplicate centroids
    order = np.argsort(centroids, kind="stable")
    centroids = centroids[order]
    remap = np.empty(k, dtype=np.int64)
    remap[order] = np.arange(k)
    labels = remap[labels]
    keep: list[float] = []
    merge = np.empty(k, dtype=np.int64)
    for c in range(k):
        if keep and centroids[c] == keep[-1]:
            merge[c] = len(keep) - 1
        else:
            merge[c] = len(keep)
            keep.append(float(centroids[c]))
    centroids = np.asarray(keep)
    labels = merge[labels]

    centroids.setflags(write=False)
    labels.setflags(write=False)
    return Partition(
        centroids=centroids,
        labels=labels,
        k=int(centroids.size),
        requested_k=requested_k,
        n_iter=n_iter,
    )


def assign_level(p: float | None, centroids) -> int:
    """Index of the nearest centroid; ties to the lower index; None maps to 0."""
    centroids = np.asarray(centroids, dtype=np.float64)
    if centroids.ndim != 1 or centroids.size == 0:
        raise ContractError("assign_level needs a nonempty centroid array")
    if p is None or (isinstance(p, float) and np.isnan(p)):
        return 0
    return int(np.abs(float(p) - centroids).argmin())
