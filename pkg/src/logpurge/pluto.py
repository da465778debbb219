"""Dominance-based purification baseline (Pluto).

Each K-means cluster is summarised by ``dom = s1 / s2``, the ratio of the top
two singular values of its (centred) embedding matrix. A spike in the sorted
dominance curve separates high- from low-contamination clusters; low clusters
then lose the members best aligned with the second right-singular vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import AllInfinite, ClusterTooSmall, InfiniteDominance, InvalidConfig, TooFewPoints
from .regions import KMeans

DOM_INF = math.inf
_ZERO = 1e-12


@dataclass(frozen=True)
class PlutoParams:
    alpha: float = 0.1
    spike_method: str = "max_gap"
    percentile: float = 80.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise InvalidConfig("alpha must be > 0")
        if self.spike_method not in ("max_gap", "percentile"):
            raise InvalidConfig(f"unknown spike method {self.spike_method!r}")


@dataclass(frozen=True, eq=False)
class ClusterSpectrum:
    lambda1: float
    lambda2: float
    v2: np.ndarray
    dom: float


def top_singular_pairs(E, n_pairs=2, tol=1e-8, max_iter=500, block=8, seed=0):
    """Top singular values / right vectors by orthogonalised block power iteration.

    Works on the Gram matrix ``E.T @ E`` with a QR step and a Rayleigh-Ritz
    projection each sweep; stops once the leading Ritz values move less than
    ``tol`` (relative). Singular values are recomputed as ``||E v||``.
    """
    E = np.asarray(E, dtype=np.float64)
    d = E.shape[1]
    p = min(d, max(block, n_pairs))
    G = E.T @ E
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((d, p)))
    prev = None
    for _ in range(max_iter):
        Q, _ = np.linalg.qr(G @ Q)
        T = Q.T @ G @ Q
        w, U = np.linalg.eigh((T + T.T) / 2)
        order = np.argsort(w)[::-1]
        w, U = w[order], U[:, order]
        Q = Q @ U
        top = np.maximum(w[:n_pairs], 0.0)
        if prev is not None and np.all(np.abs(top - prev) <= tol * max(top[0], _ZERO)):
            break
        prev = top
    V = Q[:, :n_pairs]
    sigmas = np.linalg.norm(E @ V, axis=0)
    return sigmas, V


def dominance(E, center=True) -> ClusterSpectrum:
    E = np.asarray(E, dtype=np.float64)
    if E.ndim != 2 or E.shape[0] < 2:
        raise ClusterTooSmall("dominance needs at least two rows")
    if center:
        E = E - E.mean(0)
    if E.shape[1] == 1:
        s1 = float(np.linalg.norm(E))
        return ClusterSpectrum(s1, 0.0, np.zeros(1), DOM_INF)
    sigmas, V = top_singular_pairs(E)
    s1, s2 = float(sigmas[0]), float(sigmas[1])
    if s2 > s1:
        s1, s2 = s2, s1
        V = V[:, ::-1]
    dom = DOM_INF if s2 < _ZERO else s1 / s2
    return ClusterSpectrum(s1, s2, V[:, 1].copy(), dom)


def estimate_anomaly_ratio(spectrum: ClusterSpectrum, params: PlutoParams, kind: str) -> float:
    if not math.isfinite(spectrum.dom):
        raise InfiniteDominance("cannot estimate a ratio from infinite dominance")
    if kind == "low":
        r = params.alpha / spectrum.dom
    elif kind == "high":
        r = params.alpha * spectrum.dom
    else:
        raise InvalidConfig(f"kind must be 'low' or 'high', got {kind!r}")
    return min(max(r, 0.0), 1.0)


def spike_split(doms, method="max_gap", percentile=80.0):
    """Split cluster indices into ``(high_ids, low_ids)`` by dominance.

    ``max_gap`` cuts the descending dominance curve at its largest step;
    infinite dominance always lands on the high side. ``percentile`` marks
    clusters strictly above the given percentile of finite values.
    """
    doms = np.asarray(doms, dtype=np.float64)
    finite = np.isfinite(doms)
    if not finite.any():
        raise AllInfinite("every cluster has infinite dominance")
    idx = np.flatnonzero(finite)
    high = set(np.flatnonzero(~finite).tolist())
    if method == "max_gap":
        order = idx[np.argsort(-doms[idx], kind="stable")]
        vals = doms[order]
        if len(vals) > 1:
            gaps = vals[:-1] - vals[1:]
            cut = int(np.argmax(gaps))
            if gaps[cut] > 0:
                high.update(order[: cut + 1].tolist())
    elif method == "percentile":
        thr = np.percentile(doms[idx], percentile)
        high.update(idx[doms[idx] > thr].tolist())
    else:
        raise InvalidConfig(f"unknown spike method {method!r}")
    low = [i for i in range(len(doms)) if i not in high]
    return sorted(high), low


def filter_low_contamination(member_ids, X, spectrum: ClusterSpectrum, r):
    """Ids of the ``ceil(r * n)`` members most aligned with the second singular vector."""
    if not 0 <= r <= 1:
        raise InvalidConfig("ratio must lie in [0, 1]")
    ids = np.asarray(member_ids, dtype=np.int64)
    n_remove = int(math.ceil(r * len(ids) - 1e-9))
    if n_remove <= 0:
        return []
    pts = np.asarray(X, dtype=np.float64)[ids]
    score = np.abs((pts - pts.mean(0)) @ spectrum.v2)
    order = np.lexsort((ids, -score))
    return sorted(int(i) for i in ids[order[:n_remove]])


class PlutoPurifier(BaseEstimator):
    """Select a clean subset by dominance spikes and second-vector alignment.

    High-contamination clusters are dropped whole; low-contamination clusters
    lose ``ceil(alpha / dom * n)`` members along their second singular vector.
    ``alpha`` is the global anomaly ratio and must be supplied.
    """

    def __init__(self, n_clusters=20, alpha=0.1, spike_method="max_gap", percentile=80.0,
                 center=True, random_state=0):
        self.n_clusters = n_clusters
        self.alpha = alpha
        self.spike_method = spike_method
        self.percentile = percentile
        self.center = center
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        params = PlutoParams(self.alpha, self.spike_method, self.percentile)
        if X.shape[0] < self.n_clusters:
            raise TooFewPoints(f"{X.shape[0]} points for K={self.n_clusters}")
        km = KMeans(self.n_clusters, random_state=self.random_state).fit(X)
        labels = km.labels_
        spectra, doms = [], []
        for k in range(km.cluster_centers_.shape[0]):
            members = np.flatnonzero(labels == k)
            if len(members) < 2:
                spectra.append(None)
                doms.append(DOM_INF)
                continue
            spec = dominance(X[members], center=self.center)
            spectra.append(spec)
            doms.append(spec.dom)
        high, low = spike_split(doms, params.spike_method, params.percentile)
        keep = np.zeros(X.shape[0], dtype=bool)
        table = []
        for k, spec in enumerate(spectra):
            members = np.flatnonzero(labels == k)
            row = {"cluster": k, "size": int(len(members)), "dom": doms[k],
                   "lambda1": spec.lambda1 if spec else None,
                   "lambda2": spec.lambda2 if spec else None,
                   "kind": "high" if k in high else "low", "ratio": None, "removed": 0}
            if k in low and spec is not None and math.isfinite(spec.dom):
                r = estimate_anomaly_ratio(spec, params, "low")
                removed = filter_low_contamination(members, X, spec, r)
                keep[members] = True
                keep[removed] = False
                row.update(ratio=r, removed=len(removed))
            elif k in low:
                keep[members] = True
            else:
                row["removed"] = int(len(members))
            table.append(row)
        self.labels_ = labels
        self.spectra_ = spectra
        self.dominance_ = np.asarray(doms)
        self.high_clusters_ = high
        self.low_clusters_ = low
        self.dominance_table_ = table
        self.support_ = keep
        return self

    def get_support(self, indices=False):
        check_is_fitted(self, "support_")
        return np.flatnonzero(self.support_) if indices else self.support_.copy()
