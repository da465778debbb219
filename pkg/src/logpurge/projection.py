"""Exact t-SNE to 2-D and silhouette-driven subdivision of the layout."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.metrics import silhouette_score
from sklearn.utils.validation import check_array

from .exceptions import DegenerateRow, InvalidConfig, TooFewPoints
from .regions import KMeans, sq_distances

_TINY = 1e-300


@dataclass(frozen=True)
class ProjectionConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 200.0
    early_exaggeration: float = 12.0
    exaggeration_iters: int = 250
    seed: int = 0

    def __post_init__(self):
        if not self.perplexity > 0:
            raise InvalidConfig("perplexity must be > 0")
        if self.iterations < 250:
            raise InvalidConfig("iterations must be >= 250")
        if not self.learning_rate > 0:
            raise InvalidConfig("learning_rate must be > 0")


def _row_stats(sq, log_sigma, mask):
    """Conditional rows and their perplexities for per-row ``log_sigma``."""
    a = -sq / (2.0 * np.exp(2.0 * log_sigma))[:, None]
    a = np.where(mask, a, -np.inf)
    a -= a.max(1, keepdims=True)
    e = np.exp(a)
    z = e.sum(1, keepdims=True)
    p = e / z
    logp = np.where(mask, a - np.log(z), 0.0)
    entropy = -(p * logp).sum(1)
    return p, np.exp(entropy)


def perplexity_sigmas(distances, target_perplexity, tol=1e-4, max_steps=60):
    """Per-row Gaussian bandwidths whose conditionals hit ``target_perplexity``.

    ``distances`` are plain Euclidean distances (symmetric, zero diagonal).
    Bisection runs on ``log(sigma)`` between bounds scaled to each row's own
    distances, so scaling the input scales the result exactly.

    Returns
    -------
    sigmas : ndarray of shape (n,)
    conditional : ndarray of shape (n, n)
        Row-stochastic matrix of ``p_{j|i}`` with a zero diagonal.
    """
    D = np.asarray(distances, dtype=np.float64)
    n = D.shape[0]
    if D.ndim != 2 or D.shape[1] != n:
        raise InvalidConfig("distance matrix must be square")
    mask = ~np.eye(n, dtype=bool)
    off = np.where(mask, D, 0.0)
    dmax = off.max(1)
    if np.any(dmax <= 0):
        raise DegenerateRow(f"row {int(np.argmin(dmax))} has only zero distances")
    pos = np.where(mask & (D > 0), D, np.inf)
    dmin = pos.min(1)
    lo = np.log(dmin) - 10.0
    hi = np.log(dmax) + 10.0
    sq = D * D
    log_target = np.log(target_perplexity)
    mid = (lo + hi) / 2
    for _ in range(max_steps):
        mid = (lo + hi) / 2
        _, perp = _row_stats(sq, mid, mask)
        err = np.log(perp) - log_target
        if np.all(np.abs(perp - target_perplexity) <= tol):
            break
        too_wide = err > 0
        hi = np.where(too_wide, mid, hi)
        lo = np.where(too_wide, lo, mid)
    p, _ = _row_stats(sq, mid, mask)
    return np.exp(mid), p


def row_perplexities(conditional):
    p = np.asarray(conditional)
    logp = np.log(np.where(p > 0, p, 1.0))
    return np.exp(-(p * logp).sum(1))


def joint_probabilities(X, perplexity):
    """Symmetrised joint ``P`` (sums to one) from calibrated conditionals."""
    X = np.asarray(X, dtype=np.float64)
    D = np.sqrt(sq_distances(X, X))
    np.fill_diagonal(D, 0.0)
    D = (D + D.T) / 2
    _, cond = perplexity_sigmas(D, perplexity)
    P = (cond + cond.T) / (2.0 * X.shape[0])
    return P / P.sum()


def kl_divergence(P, Y):
    num = 1.0 / (1.0 + sq_distances(Y, Y))
    np.fill_diagonal(num, 0.0)
    Q = num / num.sum()
    nz = P > 0
    return float((P[nz] * np.log(P[nz] / np.maximum(Q[nz], _TINY))).sum())


class TSNE(BaseEstimator, TransformerMixin):
    """Exact O(N^2) t-SNE into two dimensions.

    Gradient descent with momentum 0.5 (0.8 after ``exaggeration_iters``),
    early exaggeration, and per-parameter adaptive gains. The initial layout
    is ``N(0, 1e-4^2)`` from ``random_state``.
    """

    def __init__(self, perplexity=30.0, n_iter=1000, learning_rate=200.0, early_exaggeration=12.0,
                 exaggeration_iters=250, random_state=0, kl_every=50):
        self.perplexity = perplexity
        self.n_iter = n_iter
        self.learning_rate = learning_rate
        self.early_exaggeration = early_exaggeration
        self.exaggeration_iters = exaggeration_iters
        self.random_state = random_state
        self.kl_every = kl_every

    @classmethod
    def from_config(cls, cfg: ProjectionConfig, **overrides):
        params = dict(perplexity=cfg.perplexity, n_iter=cfg.iterations, learning_rate=cfg.learning_rate,
                      early_exaggeration=cfg.early_exaggeration, exaggeration_iters=cfg.exaggeration_iters,
                      random_state=cfg.seed)
        params.update(overrides)
        return cls(**params)

    def fit(self, X, y=None):
        self.fit_transform(X)
        return self

    def fit_transform(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        n = X.shape[0]
        if n < 10:
            raise TooFewPoints(f"t-SNE needs at least 10 points, got {n}")
        if not 3 * self.perplexity < n:
            raise InvalidConfig(f"perplexity {self.perplexity} too large for {n} points")
        ProjectionConfig(self.perplexity, self.n_iter, self.learning_rate)
        P = joint_probabilities(X, self.perplexity)
        rng = np.random.default_rng(self.random_state)
        Y = rng.standard_normal((n, 2)) * 1e-4
        update = np.zeros_like(Y)
        gains = np.ones_like(Y)
        history = []
        kl_at_switch = None
        for it in range(self.n_iter):
            early = it < self.exaggeration_iters
            if it == self.exaggeration_iters:
                kl_at_switch = kl_divergence(P, Y)
            exag = self.early_exaggeration if early else 1.0
            momentum = 0.5 if early else 0.8
            num = 1.0 / (1.0 + sq_distances(Y, Y))
            np.fill_diagonal(num, 0.0)
            Q = num / num.sum()
            W = (exag * P - Q) * num
            grad = 4.0 * (W.sum(1)[:, None] * Y - W @ Y)
            same = np.sign(grad) == np.sign(update)
            gains = np.where(same, gains * 0.8, gains + 0.2)
            np.maximum(gains, 0.01, out=gains)
            update = momentum * update - self.learning_rate * gains * grad
            Y = Y + update
            Y = Y - Y.mean(0)
            if self.kl_every and (it + 1) % self.kl_every == 0:
                history.append((it + 1, kl_divergence(P, Y)))
        self.P_ = P
        self.embedding_ = Y
        self.kl_divergence_ = kl_divergence(P, Y)
        self.kl_at_exaggeration_end_ = kl_at_switch
        self.kl_history_ = history
        return Y


def tsne(points, cfg: ProjectionConfig = ProjectionConfig()):
    return TSNE.from_config(cfg).fit_transform(points)


@dataclass
class Subdivision:
    groups: list
    n_clusters: int
    silhouette: float
    low_confidence: bool
    silhouettes: dict = field(default_factory=dict)


def subdivide(layout, min_size=10, k_range=(2, 8), seed=0, low_confidence_below=0.2) -> Subdivision:
    """Cluster a 2-D layout with the silhouette-best K, then merge undersized groups.

    Returns row-index groups that partition ``range(len(layout))``. Groups
    smaller than ``min_size`` are folded into the sibling with the nearest
    centroid, smallest first.
    """
    Y = np.asarray(layout, dtype=np.float64)
    n = Y.shape[0]
    if n < 2 * min_size or n < 3:
        raise TooFewPoints(f"{n} points cannot be subdivided with min_size={min_size}")
    scores, fits = {}, {}
    for k in range(k_range[0], min(k_range[1], n - 1) + 1):
        km = KMeans(n_clusters=k, random_state=seed).fit(Y)
        if km.cluster_centers_.shape[0] < 2:
            continue
        scores[k] = float(silhouette_score(Y, km.labels_))
        fits[k] = km.labels_
    if not scores:
        return Subdivision([np.arange(n)], 1, 0.0, True, {})
    best = max(scores, key=lambda k: (scores[k], -k))
    labels = fits[best].copy()
    groups = {g: np.flatnonzero(labels == g) for g in np.unique(labels)}
    while len(groups) > 1:
        small = [g for g in groups if len(groups[g]) < min_size]
        if not small:
            break
        g = min(small, key=lambda h: (len(groups[h]), h))
        c = Y[groups[g]].mean(0)
        others = [h for h in groups if h != g]
        target = min(others, key=lambda h: (float(((Y[groups[h]].mean(0) - c) ** 2).sum()), h))
        groups[target] = np.sort(np.concatenate([groups[target], groups.pop(g)]))
    out = [groups[g] for g in sorted(groups, key=lambda h: groups[h][0])]
    return Subdivision(out, best, scores[best], scores[best] < low_confidence_below, scores)
