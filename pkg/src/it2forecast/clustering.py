"""Pre-stage helpers: max-min normalization, fuzzy c-means and the
cluster-driven initialization of antecedent and co-antecedent sets."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .fuzzy import It2Mf
from .network import SIGMA_MIN

UPSILON = 0.1


@dataclass
class Normalizer:
    """Per-column affine map onto [0, 1] fitted on training data."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        self.min = np.atleast_1d(np.asarray(self.min, dtype=float))
        self.max = np.atleast_1d(np.asarray(self.max, dtype=float))
        if self.min.shape != self.max.shape:
            raise ValueError("normalizer min and max must have the same length")
        bad = np.flatnonzero(~(self.max > self.min))
        if bad.size:
            raise ValueError(f"normalizer dimension {int(bad[0])} has max <= min "
                             f"({self.max[bad[0]]} <= {self.min[bad[0]]})")

    @classmethod
    def fit(cls, data, names=None) -> "Normalizer":
        data = np.asarray(data, dtype=float)
        if data.ndim == 1:
            data = data[:, None]
        lo, hi = data.min(axis=0), data.max(axis=0)
        const = np.flatnonzero(hi <= lo)
        if const.size:
            j = int(const[0])
            label = f"{j} ({names[j]})" if names is not None else str(j)
            raise ValueError(f"cannot normalize constant column {label}: every value equals {lo[j]}")
        return cls(lo, hi)

    @property
    def scale(self) -> np.ndarray:
        return self.max - self.min

    def apply(self, data):
        # no clipping: test values outside the training range extrapolate
        return (np.asarray(data, dtype=float) - self.min) / self.scale

    def invert(self, data):
        return np.asarray(data, dtype=float) * self.scale + self.min

    def select(self, columns) -> "Normalizer":
        idx = list(columns)
        return Normalizer(self.min[idx], self.max[idx])


def fit_normalizer(data, names=None) -> Normalizer:
    return Normalizer.fit(data, names)


_ids = itertools.count()


@dataclass(eq=False)
class Cluster:
    centroid: np.ndarray
    spread: np.ndarray
    id: int = field(default_factory=lambda: next(_ids))

    def __post_init__(self):
        self.centroid = np.asarray(self.centroid, dtype=float)
        self.spread = np.maximum(np.asarray(self.spread, dtype=float), SIGMA_MIN)


class ClusterBase:
    """Available (B^C) and selected (B^S) clusters; their union never changes."""

    def __init__(self, clusters):
        self._all = list(clusters)
        self.available: list[Cluster] = list(self._all)
        self.selected: list[Cluster] = []

    @property
    def total(self) -> int:
        return len(self._all)

    def select(self, cluster: Cluster) -> None:
        self.available.remove(cluster)
        self.selected.append(cluster)

    def release(self, cluster: Cluster) -> None:
        self.selected.remove(cluster)
        self.available.append(cluster)
        # keep B^C in its original order so argmin tie-breaks stay stable
        order = {c.id: i for i, c in enumerate(self._all)}
        self.available.sort(key=lambda c: order[c.id])

    def check(self) -> None:
        a = {c.id for c in self.available}
        s = {c.id for c in self.selected}
        if a & s:
            raise AssertionError("a cluster is both available and selected")
        if len(a) + len(s) != self.total or (a | s) != {c.id for c in self._all}:
            raise AssertionError("cluster base lost or duplicated a cluster")


@dataclass
class FcmResult:
    clusters: list[Cluster]
    membership: np.ndarray
    objective: list[float]
    iterations: int


def _memberships(data, centers, m):
    d2 = ((data[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    U = np.empty_like(d2)
    zero = d2 <= 1e-300
    hit = zero.any(axis=1)
    if np.any(~hit):
        # u_ic = 1 / sum_k (d_ic / d_ik)^(2/(m-1)), computed with squared distances
        inv = d2[~hit] ** (-1.0 / (m - 1.0))
        U[~hit] = inv / inv.sum(axis=1, keepdims=True)
    if np.any(hit):
        # a point sitting on a centroid belongs to it fully
        z = zero[hit].astype(float)
        U[hit] = z / z.sum(axis=1, keepdims=True)
    return U, d2


def fcm(data, n_clusters: int, fuzzifier: float = 2.0, tol: float = 1e-6,
        max_iter: int = 300, seed: int = 0, full: bool = False):
    """Bezdek fuzzy c-means.

    Parameters
    ----------
    data : array (N, n)
    n_clusters : int
        Number of clusters, at most N.
    fuzzifier : float
        Exponent m > 1 on the memberships.
    tol : float
        Stop once no centroid coordinate moves more than this.

    Returns
    -------
    list of Cluster, or an ``FcmResult`` when ``full`` is set.
    """
    X = np.asarray(data, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    N = X.shape[0]
    if not 1 <= n_clusters <= N:
        raise ValueError(f"need 1 <= n_clusters <= N, got n_clusters={n_clusters}, N={N}")
    if fuzzifier <= 1:
        raise ValueError("fuzzifier must exceed 1")
    rng = np.random.default_rng(seed)
    U = rng.random((N, n_clusters))
    U /= U.sum(axis=1, keepdims=True)
    centers = None
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        W = U ** fuzzifier
        new_centers = (W.T @ X) / W.sum(axis=0)[:, None]
        U, d2 = _memberships(X, new_centers, fuzzifier)
        history.append(float(np.sum((U ** fuzzifier) * d2)))
        shift = np.inf if centers is None else np.max(np.abs(new_centers - centers))
        centers = new_centers
        if shift < tol:
            break
    # final centroids consistent with the final memberships
    W = U ** fuzzifier
    wsum = W.sum(axis=0)
    centers = (W.T @ X) / wsum[:, None]
    var = np.einsum("ic,icj->cj", W, (X[:, None, :] - centers[None]) ** 2) / wsum[:, None]
    clusters = [Cluster(centers[c], np.sqrt(var[c])) for c in range(n_clusters)]
    if full:
        return FcmResult(clusters, U, history, it)
    return clusters


def init_rule_antecedent(cluster: Cluster, upsilon: float = UPSILON) -> list[It2Mf]:
    if not 0 <= upsilon < 1:
        raise ValueError(f"upsilon must lie in [0, 1), got {upsilon}")
    m1, m2, sigma = antecedent_arrays(cluster, upsilon)
    return [It2Mf(a, b, s) for a, b, s in zip(m1, m2, sigma)]


def antecedent_arrays(cluster: Cluster, upsilon: float = UPSILON):
    a = cluster.centroid * (1.0 - upsilon)
    b = cluster.centroid * (1.0 + upsilon)
    # a negative centroid flips the interval
    return np.minimum(a, b), np.maximum(a, b), np.maximum(cluster.spread, SIGMA_MIN)


def init_co_antecedent(data, K: int):
    """Column means and population stds, repeated for every output."""
    X = np.asarray(data, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] == 0:
        raise ValueError("cannot initialize co-antecedents from empty data")
    m = X.mean(axis=0)
    s = np.maximum(X.std(axis=0), SIGMA_MIN)
    return np.tile(m, (K, 1)), np.tile(s, (K, 1))
