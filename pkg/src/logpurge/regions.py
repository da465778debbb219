"""K-means regions and density-peak representatives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .core import Region, RepresentativeSet
from .exceptions import RegionTooSmall, TooFewPoints

_CHUNK = 2048


def sq_distances(A, B):
    """Squared Euclidean distances between the rows of ``A`` and ``B``."""
    d = (A * A).sum(1)[:, None] - 2.0 * A @ B.T + (B * B).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_plusplus(X, n_clusters, rng):
    n = X.shape[0]
    centers = np.empty((n_clusters, X.shape[1]))
    first = rng.integers(n)
    centers[0] = X[first]
    closest = sq_distances(X, centers[:1]).ravel()
    for c in range(1, n_clusters):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=closest / total)
        centers[c] = X[idx]
        closest = np.minimum(closest, sq_distances(X, X[idx:idx + 1]).ravel())
    return centers


@dataclass(frozen=True)
class Partition:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float

    @property
    def n_regions(self) -> int:
        return self.centroids.shape[0]

    def members(self, k) -> np.ndarray:
        return np.flatnonzero(self.assignments == k)


class KMeans(BaseEstimator, ClusterMixin):
    """Lloyd's algorithm with k-means++ seeding.

    Iterates until the largest centroid shift drops below ``tol`` or
    ``max_iter`` is reached. A cluster that empties is reseeded with the point
    farthest from its current centroid; clusters still empty at the end are
    pruned and labels re-densified.
    """

    def __init__(self, n_clusters=20, max_iter=300, tol=1e-6, random_state=0):
        self.n_clusters = n_clusters
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        n = X.shape[0]
        if n < self.n_clusters:
            raise TooFewPoints(f"{n} points for K={self.n_clusters}")
        rng = np.random.default_rng(self.random_state)
        centers = kmeans_plusplus(X, self.n_clusters, rng)
        labels = np.zeros(n, dtype=np.int64)
        for it in range(self.max_iter):
            d = sq_distances(X, centers)
            labels = d.argmin(1)
            point_cost = d[np.arange(n), labels]
            new = np.empty_like(centers)
            counts = np.bincount(labels, minlength=self.n_clusters)
            for k in range(self.n_clusters):
                if counts[k]:
                    new[k] = X[labels == k].mean(0)
                else:
                    far = int(point_cost.argmax())
                    new[k] = X[far]
                    point_cost[far] = -1.0
            shift = np.sqrt(((new - centers) ** 2).sum(1)).max()
            centers = new
            if shift < self.tol:
                break
        self.n_iter_ = it + 1
        d = sq_distances(X, centers)
        labels = d.argmin(1)
        used = np.unique(labels)
        remap = np.full(self.n_clusters, -1)
        remap[used] = np.arange(len(used))
        self.labels_ = remap[labels]
        self.cluster_centers_ = np.vstack([X[labels == k].mean(0) for k in used])
        self.inertia_ = float(sq_distances(X, self.cluster_centers_)[np.arange(n), self.labels_].sum())
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        return sq_distances(check_array(X, dtype=np.float64), self.cluster_centers_).argmin(1)

    @property
    def partition_(self) -> Partition:
        check_is_fitted(self, "labels_")
        return Partition(self.labels_, self.cluster_centers_, self.inertia_)


def kmeans(points, K, seed=0) -> Partition:
    return KMeans(n_clusters=K, random_state=seed).fit(points).partition_


def knn_mean_distances(points, k):
    """Mean Euclidean distance from every row to its ``k`` nearest other rows."""
    n = points.shape[0]
    out = np.empty(n)
    for lo in range(0, n, _CHUNK):
        block = np.sqrt(sq_distances(points[lo:lo + _CHUNK], points))
        rows = np.arange(block.shape[0])
        block[rows, lo + rows] = np.inf
        part = np.partition(block, k - 1, axis=1)[:, :k]
        out[lo:lo + _CHUNK] = part.mean(1)
    return out


def local_density(points, i, k_nn=10, epsilon=1e-6) -> float:
    """Inverse of the mean distance from row ``i`` to its ``k_nn`` nearest rows, smoothed by ``epsilon``."""
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] < k_nn + 1:
        raise RegionTooSmall(f"region of {points.shape[0]} points, k_nn={k_nn}")
    d = np.sqrt(sq_distances(points[i:i + 1], points)).ravel()
    d[i] = np.inf
    dbar = np.partition(d, k_nn - 1)[:k_nn].mean()
    return 1.0 / (dbar + epsilon)


def region_densities(points, k_nn=10, epsilon=1e-6):
    n = points.shape[0]
    if n == 1:
        return np.array([1.0 / epsilon])
    k = min(k_nn, n - 1)
    return 1.0 / (knn_mean_distances(points, k) + epsilon)


def auto_r_min(points, rng=None, max_points=2000):
    """Half the median pairwise distance (on a seeded subsample for big regions)."""
    n = points.shape[0]
    if n < 2:
        return np.inf
    if n > max_points:
        rng = rng or np.random.default_rng(0)
        points = points[np.sort(rng.choice(n, max_points, replace=False))]
    d = np.sqrt(sq_distances(points, points))
    iu = np.triu_indices(points.shape[0], 1)
    return max(0.5 * float(np.median(d[iu])), 1e-12)


def select_representatives(member_ids, X, k_nn=10, r_min="auto", M=5, epsilon=1e-6) -> RepresentativeSet:
    """Density-peak centers of a region plus the ``M`` nearest non-centers of each.

    Members are visited by decreasing density (ties: lower seq_id first); a
    member becomes a center when it lies at least ``r_min`` from every center
    accepted so far.
    """
    ids = np.asarray(member_ids, dtype=np.int64)
    if ids.size == 0:
        raise RegionTooSmall("empty region")
    if ids.size == 1:
        return RepresentativeSet((int(ids[0]),), ((),))
    pts = np.asarray(X, dtype=np.float64)[ids]
    rho = region_densities(pts, k_nn, epsilon)
    radius = auto_r_min(pts) if r_min == "auto" else float(r_min)
    order = np.lexsort((ids, -rho))
    centers = []
    for j in order:
        if not centers:
            centers.append(j)
            continue
        dist = np.sqrt(((pts[centers] - pts[j]) ** 2).sum(1))
        if dist.min() >= radius:
            centers.append(j)
    is_center = np.zeros(ids.size, dtype=bool)
    is_center[centers] = True
    neighbors = []
    for c in centers:
        if M <= 0:
            neighbors.append(())
            continue
        d = np.sqrt(((pts - pts[c]) ** 2).sum(1))
        d[is_center] = np.inf
        cand = np.lexsort((ids, d))[:M]
        cand = cand[np.isfinite(d[cand])]
        neighbors.append(tuple(int(ids[j]) for j in cand))
    return RepresentativeSet(tuple(int(ids[c]) for c in centers), tuple(neighbors))


def build_regions(X, partition: Partition, k_nn=10, r_min="auto", M=5, epsilon=1e-6) -> list:
    regions = []
    for k in range(partition.n_regions):
        members = partition.members(k)
        reps = select_representatives(members, X, k_nn, r_min, M, epsilon)
        regions.append(Region(k, tuple(int(i) for i in members),
                              tuple(partition.centroids[k].tolist()), reps))
    return regions
