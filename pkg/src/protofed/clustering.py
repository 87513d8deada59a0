"""Parameter-free first-neighbor clustering and a cosine k-means baseline.

The first-neighbor scheme links every point to its most cosine-similar peer;
connected components of that relation form the finest partition, and the
recursion on cluster means builds a strictly coarsening hierarchy without any
tunable parameter. k-means (with k-means++ seeding, cosine distance) is kept
as the comparison backend.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import first_neighbor_labels, pairwise_cosine
from .numerics import normalize_rows


@dataclass(frozen=True)
class Partition:
    """A total assignment of points to dense cluster ids [0, num_clusters)."""

    assignments: np.ndarray
    num_clusters: int

    def __post_init__(self):
        a = np.asarray(self.assignments, dtype=np.int64)
        object.__setattr__(self, "assignments", a)
        if a.ndim != 1 or a.size == 0:
            raise ValueError("assignments must be a non-empty 1-D array")
        present = np.unique(a)
        if present[0] != 0 or present[-1] != self.num_clusters - 1 or present.size != self.num_clusters:
            raise ValueError("cluster ids must be dense in [0, num_clusters) with no empty cluster")

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.num_clusters)


@dataclass(frozen=True)
class FinchHierarchy:
    """Partitions from finest to coarsest; counts strictly decrease."""

    levels: tuple[Partition, ...]

    def __post_init__(self):
        if not self.levels:
            raise ValueError("hierarchy needs at least one level")
        counts = [p.num_clusters for p in self.levels]
        if any(b >= a for a, b in zip(counts, counts[1:])):
            raise ValueError(f"cluster counts must strictly decrease, got {counts}")

    def counts(self) -> list[int]:
        return [p.num_clusters for p in self.levels]


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError(f"expected a non-empty (n, d) point array, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points contain non-finite values")
    return pts


def first_neighbor_graph(points) -> np.ndarray:
    """Symmetric boolean adjacency of the first-neighbor rule.

    Edge (i, j) is present iff nn(i) = j, nn(j) = i, or nn(i) = nn(j), where
    nn(i) is the most cosine-similar other point (ties to the lowest index).
    A single point yields an empty graph.
    """
    pts = _as_points(points)
    n = pts.shape[0]
    adj = np.zeros((n, n), dtype=bool)
    if n == 1:
        return adj
    sim = pairwise_cosine(pts)
    np.fill_diagonal(sim, -np.inf)
    nn = np.argmax(sim, axis=1)
    adj[np.arange(n), nn] = True
    adj |= adj.T
    shared = nn[:, None] == nn[None, :]
    np.fill_diagonal(shared, False)
    adj |= shared
    return adj


def _relabel_dense(raw: np.ndarray) -> tuple[np.ndarray, int]:
    """Relabel arbitrary ids to dense ids ordered by first appearance."""
    _, first = np.unique(raw, return_index=True)
    order = raw[np.sort(first)]
    remap = {int(c): i for i, c in enumerate(order)}
    out = np.array([remap[int(c)] for c in raw], dtype=np.int64)
    return out, len(order)


def cluster_centers(partition: Partition, points) -> np.ndarray:
    """Arithmetic mean of each cluster's member vectors, ordered by cluster id."""
    pts = _as_points(points)
    if partition.assignments.shape[0] != pts.shape[0]:
        raise ValueError("partition does not match the given points")
    k = partition.num_clusters
    centers = np.zeros((k, pts.shape[1]))
    np.add.at(centers, partition.assignments, pts)
    return centers / partition.sizes()[:, None]


def finch(points) -> FinchHierarchy:
    """Build the full first-neighbor hierarchy of a point set.

    Level 0 partitions the points themselves; each next level re-links the
    previous level's cluster means and merges accordingly, until a single
    cluster remains.
    """
    pts = _as_points(points)
    n = pts.shape[0]
    if n == 1:
        return FinchHierarchy((Partition(np.zeros(1, dtype=np.int64), 1),))

    labels = first_neighbor_labels(pairwise_cosine(pts))
    labels, k = _relabel_dense(labels)
    levels = [Partition(labels, k)]
    while k > 1:
        means = cluster_centers(levels[-1], pts)
        merge = first_neighbor_labels(pairwise_cosine(means))
        labels, new_k = _relabel_dense(merge[levels[-1].assignments])
        if new_k >= k:  # cannot happen for the nn relation; guard anyway
            break
        levels.append(Partition(labels, new_k))
        k = new_k
    return FinchHierarchy(tuple(levels))


def select_partition(hierarchy: FinchHierarchy) -> Partition:
    """Pick the coarsest non-trivial level: the smallest cluster count > 1,
    falling back to the single-cluster level when nothing finer exists."""
    nontrivial = [p for p in hierarchy.levels if p.num_clusters > 1]
    if nontrivial:
        return min(nontrivial, key=lambda p: p.num_clusters)
    return hierarchy.levels[-1]


def _kmeans_objective(xn, centers, assign):
    sims = np.zeros(xn.shape[0])
    cn = normalize_rows(centers)
    for j in range(centers.shape[0]):
        m = assign == j
        if np.any(m):
            sims[m] = xn[m] @ cn[j]
    return float(np.sum(1.0 - sims))


def kmeans(points, k: int, rng: np.random.Generator, trace: list | None = None) -> Partition:
    """Lloyd iterations with k-means++ seeding under cosine distance.

    Points are normalized up front; distance is 1 - cosine. Runs until
    assignments stop changing or 100 iterations. Empty clusters are repaired
    by stealing the farthest point from the largest cluster. When ``trace``
    is given, the post-assignment objective of each iteration is appended.
    """
    pts = _as_points(points)
    n = pts.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    xn = normalize_rows(pts)

    # k-means++ over cosine distance; seed rows are unit (or zero) vectors,
    # so plain dots against xn are cosines.
    centers = np.empty((k, pts.shape[1]))
    centers[0] = xn[int(rng.integers(n))]
    best_sim = xn @ centers[0]
    for j in range(1, k):
        d2 = np.clip(1.0 - best_sim, 0.0, None) ** 2
        tot = d2.sum()
        if tot <= 0.0:
            centers[j] = xn[int(rng.integers(n))]
        else:
            centers[j] = xn[int(rng.choice(n, p=d2 / tot))]
        best_sim = np.maximum(best_sim, xn @ centers[j])

    assign = np.full(n, -1, dtype=np.int64)
    for _ in range(100):
        sims = xn @ normalize_rows(centers).T
        new_assign = np.argmax(sims, axis=1).astype(np.int64)
        for j in range(k):
            if not np.any(new_assign == j):
                sizes = np.bincount(new_assign, minlength=k)
                big = int(np.argmax(sizes))
                members = np.flatnonzero(new_assign == big)
                worst = members[int(np.argmin(sims[members, big]))]
                new_assign[worst] = j
        if trace is not None:
            trace.append(_kmeans_objective(xn, centers, new_assign))
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            centers[j] = xn[assign == j].mean(axis=0)

    labels, kk = _relabel_dense(assign)
    if kk != k:  # defensive; repair above keeps every cluster populated
        raise RuntimeError("k-means lost a cluster")
    return Partition(labels, k)


def cluster_points(points, backend: str, k: int, rng: np.random.Generator | None) -> Partition:
    """Dispatch a point set to the configured clustering backend.

    ``finch`` selects the coarsest non-trivial first-neighbor level;
    ``kmeans`` runs with min(k, n) centers; ``kmeans_adaptive`` takes its k
    from the finch selection.
    """
    pts = _as_points(points)
    if backend == "finch":
        return select_partition(finch(pts))
    if backend == "kmeans_adaptive":
        k = select_partition(finch(pts)).num_clusters
    elif backend != "kmeans":
        raise ValueError(f"unknown clustering backend {backend!r}")
    if rng is None:
        raise ValueError("k-means backends need an RNG stream")
    return kmeans(pts, min(int(k), pts.shape[0]), rng)
