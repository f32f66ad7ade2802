"""Unsupervised anomaly detectors with a shared estimator interface.

Every detector follows the same orientation: ``decision_function`` returns
anomaly scores where HIGHER means MORE anomalous, and ``predict`` flags a
sample as anomalous exactly when its score exceeds ``threshold_``.
"""

from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import digamma
from sklearn.base import BaseEstimator, OutlierMixin
from sklearn.utils import check_array
from sklearn.utils.validation import check_is_fitted

from .exceptions import FitError

__all__ = [
    "BaseDetector",
    "IForestDetector",
    "LOFDetector",
    "OCSVMDetector",
    "DETECTORS",
    "make_detector",
    "average_path_length",
    "knn",
]


class BaseDetector(OutlierMixin, BaseEstimator):
    """Common fit/score/predict plumbing.

    Subclasses implement ``_fit(X)`` and ``_score(X)`` and may override
    ``_threshold(scores)``. After ``fit``:

    decision_scores_ : training scores
    threshold_ : decision threshold on the score
    labels_ : training verdicts (bool)
    n_features_in_ : input dimension
    """

    _min_samples = 2

    def _threshold(self, scores):
        c = self.contamination
        if not 0.0 < c <= 0.5:
            raise ValueError(f"contamination must be in (0, 0.5], got {c}")
        return float(np.quantile(scores, 1.0 - c))

    def fit(self, X, y=None):
        """Fit on ``X`` of shape (n_samples, n_features); ``y`` is ignored."""
        X = check_array(X, dtype=float, ensure_min_samples=1)
        if X.shape[0] < self._min_samples:
            raise FitError(f"{type(self).__name__} needs at least {self._min_samples} samples, got {X.shape[0]}")
        self.n_features_in_ = X.shape[1]
        self._fit(X)
        self.decision_scores_ = self._score(X)
        self.threshold_ = self._threshold(self.decision_scores_)
        self.labels_ = self.decision_scores_ > self.threshold_
        return self

    def _validate(self, X):
        check_is_fitted(self, "threshold_")
        X = check_array(X, dtype=float, ensure_min_samples=0)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, model was fitted on {self.n_features_in_}")
        return X

    def decision_function(self, X):
        """Anomaly score per sample; higher is more anomalous."""
        X = self._validate(X)
        if X.shape[0] == 0:
            return np.zeros(0)
        return self._score(X)

    def predict(self, X):
        """Boolean verdicts, True for anomalous."""
        return self.decision_function(X) > self.threshold_

    def fit_predict(self, X, y=None):
        return self.fit(X).labels_.copy()


# ---------------------------------------------------------------- iforest


def average_path_length(n):
    """Average unsuccessful-search path length ``c(n)`` of a BST on n points.

    ``c(n) = 2 H(n-1) - 2 (n-1) / n`` with exact harmonic numbers, ``c(1) = 0``.
    """
    n = np.asarray(n, dtype=float)
    out = np.zeros_like(n)
    big = n > 1
    nb = n[big]
    harmonic = digamma(nb) + np.euler_gamma
    out[big] = 2.0 * harmonic - 2.0 * (nb - 1.0) / nb
    return out


class _IsolationTree:
    __slots__ = ("feature", "split", "left", "right", "size", "depth")

    def __init__(self, X, height_limit, rng):
        feature, split, left, right, size, depth = [], [], [], [], [], []

        def new_node(d):
            for arr, v in ((feature, -1), (split, 0.0), (left, -1), (right, -1), (size, 0), (depth, d)):
                arr.append(v)
            return len(feature) - 1

        stack = [(new_node(0), np.arange(X.shape[0]))]
        while stack:
            node, rows = stack.pop()
            size[node] = len(rows)
            d = depth[node]
            if len(rows) <= 1 or d >= height_limit:
                continue
            sub = X[rows]
            lo = sub.min(axis=0)
            hi = sub.max(axis=0)
            candidates = np.flatnonzero(hi > lo)
            if len(candidates) == 0:
                continue
            q = int(candidates[rng.integers(len(candidates))])
            p = float(rng.uniform(lo[q], hi[q]))
            goes_left = sub[:, q] < p
            feature[node] = q
            split[node] = p
            left[node] = new_node(d + 1)
            right[node] = new_node(d + 1)
            stack.append((right[node], rows[~goes_left]))
            stack.append((left[node], rows[goes_left]))

        self.feature = np.asarray(feature, dtype=np.int64)
        self.split = np.asarray(split, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.size = np.asarray(size, dtype=np.int64)
        self.depth = np.asarray(depth, dtype=np.int64)

    def path_length(self, X):
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = self.feature[node] >= 0
        while active.any():
            r = rows[active]
            nd = node[r]
            go_left = X[r, self.feature[nd]] < self.split[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return self.depth[node] + average_path_length(self.size[node])


class IForestDetector(BaseDetector):
    """Isolation Forest.

    Each tree is grown on a subsample of ``min(max_samples, n)`` training
    points with random axis-parallel splits, up to height
    ``ceil(log2(subsample))``. The score is ``2 ** (-E[h(x)] / c(psi))``, in
    ``(0, 1]``. Splits are drawn among the features that are not constant
    inside the node; a node with no such feature is a leaf.

    Parameters
    ----------
    n_trees : int, default=100
    max_samples : int, default=256
        Subsample size psi.
    contamination : float, default=0.1
        Expected outlier fraction; sets ``threshold_`` at the
        ``1 - contamination`` quantile of the training scores.
    random_state : int or None
    """

    def __init__(self, n_trees=100, max_samples=256, contamination=0.1, random_state=None):
        self.n_trees = n_trees
        self.max_samples = max_samples
        self.contamination = contamination
        self.random_state = random_state

    def _fit(self, X):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_samples < 2:
            raise ValueError("max_samples must be >= 2")
        rng = np.random.default_rng(self.random_state)
        n = X.shape[0]
        psi = min(int(self.max_samples), n)
        limit = int(math.ceil(math.log2(psi)))
        trees = []
        for _ in range(self.n_trees):
            rows = rng.choice(n, size=psi, replace=False) if psi < n else rng.permutation(n)
            trees.append(_IsolationTree(X[rows], limit, rng))
        self.trees_ = trees
        self.subsample_size_ = psi
        self.normalizer_ = float(average_path_length(psi))

    def expected_path_length(self, X):
        X = np.asarray(X, dtype=float)
        total = np.zeros(X.shape[0])
        for tree in self.trees_:
            total += tree.path_length(X)
        return total / len(self.trees_)

    def _score(self, X):
        return np.power(2.0, -self.expected_path_length(X) / self.normalizer_)


# -------------------------------------------------------------------- lof

_CHUNK = 256
_EXACT_PAIRS = 4_000_000


def _distances(A, B, sq_b=None):
    """Euclidean distances; exact pairwise for small blocks, BLAS form otherwise."""
    if A.shape[0] * B.shape[0] <= _EXACT_PAIRS:
        return cdist(A, B)
    if sq_b is None:
        sq_b = np.einsum("ij,ij->i", B, B)
    sq_a = np.einsum("ij,ij->i", A, A)
    d2 = sq_a[:, None] + sq_b[None, :] - 2.0 * (A @ B.T)
    np.maximum(d2, 0.0, out=d2)
    return np.sqrt(d2)


def knn(query, ref, k, exclude=None, drop_exact=False):
    """Exact k nearest neighbors of each query row among ``ref`` rows.

    Ties at the k-th distance are broken by lowest reference index.

    Parameters
    ----------
    exclude : array of int, optional
        Per-query reference index to skip (the point itself during fit).
    drop_exact : bool
        Skip the lowest-index reference point at distance 0 from the query,
        so that scoring a copy of a training point reproduces that point's
        own neighborhood.

    Returns
    -------
    idx : (Q, k) int array, dist : (Q, k) float array
    """
    Q = query.shape[0]
    idx = np.empty((Q, k), dtype=np.int64)
    dist = np.empty((Q, k))
    sq_ref = np.einsum("ij,ij->i", ref, ref)
    for a in range(0, Q, _CHUNK):
        b = min(a + _CHUNK, Q)
        D = _distances(query[a:b], ref, sq_ref)
        if exclude is not None:
            D[np.arange(b - a), exclude[a:b]] = np.inf
        if drop_exact:
            zero = D == 0.0
            has = zero.any(axis=1)
            rows = np.flatnonzero(has)
            D[rows, zero[rows].argmax(axis=1)] = np.inf
        kth = np.partition(D, k - 1, axis=1)[:, k - 1]
        for r in range(b - a):
            row = D[r]
            strict = np.flatnonzero(row < kth[r])
            ties = np.flatnonzero(row == kth[r])[: k - len(strict)]
            sel = np.concatenate([strict, ties])
            sel = sel[np.argsort(row[sel], kind="stable")]
            idx[a + r] = sel
            dist[a + r] = row[sel]
    return idx, dist


def _lrd(dist, nbr_kdist):
    reach = np.maximum(dist, nbr_kdist)
    mean = reach.mean(axis=1)
    with np.errstate(divide="ignore"):
        return np.where(mean > 0, 1.0 / np.where(mean > 0, mean, 1.0), np.inf)


def _lof_from_lrd(own, nbr):
    """Mean of ``nbr / own`` per row with the duplicate conventions.

    inf/inf counts as 1, finite/inf as 0. A finite point next to an exact
    duplicate cluster would get an infinite ratio; it is capped at
    ``LOFDetector.max_score``.
    """
    own = own[:, None]
    both_inf = np.isinf(own) & np.isinf(nbr)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(both_inf, 1.0, nbr / own)
    lof = ratio.mean(axis=1)
    return np.minimum(lof, LOFDetector.max_score)


class LOFDetector(BaseDetector):
    """Local Outlier Factor on exact k-nearest neighbors.

    Training points whose k-distance is 0 (exact duplicates) have infinite
    local reachability density; a point whose neighbors are all such
    duplicates, and which is one itself, has LOF 1.

    Parameters
    ----------
    n_neighbors : int, default=20
    contamination : float, default=0.1
    """

    max_score = 1e12

    def __init__(self, n_neighbors=20, contamination=0.1):
        self.n_neighbors = n_neighbors
        self.contamination = contamination

    def _fit(self, X):
        k = int(self.n_neighbors)
        if k < 1:
            raise ValueError("n_neighbors must be >= 1")
        if k >= X.shape[0]:
            raise ValueError(f"n_neighbors={k} must be smaller than the number of samples ({X.shape[0]})")
        self._fit_X = X.copy()
        idx, dist = knn(X, X, k, exclude=np.arange(X.shape[0]))
        self.kdist_ = dist[:, -1].copy()
        self.lrd_ = _lrd(dist, self.kdist_[idx])
        self.train_lof_ = _lof_from_lrd(self.lrd_, self.lrd_[idx])

    def _score(self, X):
        idx, dist = knn(X, self._fit_X, int(self.n_neighbors), drop_exact=True)
        lrd = _lrd(dist, self.kdist_[idx])
        return _lof_from_lrd(lrd, self.lrd_[idx])


# ------------------------------------------------------------------ ocsvm


class _Kernel:
    """RBF kernel columns over the training set, fully or LRU cached."""

    def __init__(self, X, gamma, full_limit=4000, cache_columns=2048):
        self.X = X
        self.gamma = gamma
        self.sq = np.einsum("ij,ij->i", X, X)
        n = X.shape[0]
        self.full = None
        if n <= full_limit:
            self.full = self._block(X, self.sq)
        self.cache: OrderedDict[int, np.ndarray] = OrderedDict()
        self.cache_columns = cache_columns

    def _block(self, A, sq_a):
        d2 = sq_a[:, None] + self.sq[None, :] - 2.0 * (A @ self.X.T)
        np.maximum(d2, 0.0, out=d2)
        return np.exp(-self.gamma * d2)

    def column(self, i):
        if self.full is not None:
            return self.full[i]
        col = self.cache.get(i)
        if col is None:
            col = self._block(self.X[i : i + 1], self.sq[i : i + 1])[0]
            self.cache[i] = col
            if len(self.cache) > self.cache_columns:
                self.cache.popitem(last=False)
        else:
            self.cache.move_to_end(i)
        return col

    def diag(self):
        return np.ones(self.X.shape[0])


def rbf_kernel(A, B, gamma):
    sq_a = np.einsum("ij,ij->i", A, A)
    sq_b = np.einsum("ij,ij->i", B, B)
    d2 = sq_a[:, None] + sq_b[None, :] - 2.0 * (A @ B.T)
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-gamma * d2)


class OCSVMDetector(BaseDetector):
    """One-class SVM (nu formulation, RBF kernel) solved by SMO.

    Solves ``min 1/2 a'Ka`` subject to ``0 <= a_i <= 1/(nu n)`` and
    ``sum(a) = 1`` by repeatedly updating the maximal violating pair until
    the KKT gap falls below ``tol``. The decision value is
    ``f(x) = sum_i a_i K(x_i, x) - rho`` and the anomaly score is ``-f(x)``.
    The threshold is ``tol / (nu n)``, the stopping tolerance expressed in
    decision-value units: points that close to the boundary cannot be told
    apart from it at the solver's accuracy.

    Parameters
    ----------
    nu : float in (0, 1], default=0.1
    gamma : float, "auto" or "scale", default="auto"
        RBF bandwidth; "auto" is ``1 / n_features``, "scale" is
        ``1 / (n_features * X.var())``.
    tol : float, default=1e-4
    max_iter : int, default=200_000
    """

    def __init__(self, nu=0.1, gamma="auto", tol=1e-4, max_iter=200_000):
        self.nu = nu
        self.gamma = gamma
        self.tol = tol
        self.max_iter = max_iter

    def _gamma_value(self, X):
        if self.gamma == "auto":
            return 1.0 / X.shape[1]
        if self.gamma == "scale":
            var = X.var()
            return 1.0 / (X.shape[1] * var) if var > 0 else 1.0
        g = float(self.gamma)
        if g < 0:
            raise ValueError("gamma must be non-negative")
        return g

    def _threshold(self, scores):
        # points within the solver's KKT tolerance of the boundary are on it
        return self.boundary_tol_

    def _fit(self, X):
        nu = float(self.nu)
        if not 0.0 < nu <= 1.0:
            raise ValueError(f"nu must be in (0, 1], got {nu}")
        n = X.shape[0]
        gamma = self._gamma_value(X)
        C = 1.0 / (nu * n)
        kern = _Kernel(X, gamma)

        alpha = np.zeros(n)
        n_full = min(int(math.floor(nu * n)), n)
        alpha[:n_full] = C
        if n_full < n:
            alpha[n_full] = 1.0 - C * n_full
        alpha = np.clip(alpha, 0.0, C)

        grad = np.zeros(n)
        for i in np.flatnonzero(alpha):
            grad += alpha[i] * kern.column(i)

        gap = np.inf
        it = 0
        eps = 1e-12
        while it < self.max_iter:
            up = alpha < C - 1e-15 * C
            low = alpha > 1e-15 * C
            if not up.any() or not low.any():
                gap = 0.0
                break
            i = int(np.flatnonzero(up)[np.argmin(grad[up])])
            j = int(np.flatnonzero(low)[np.argmax(grad[low])])
            # gap in the conventional scaling where sum(alpha) = nu * n
            gap = (grad[j] - grad[i]) * nu * n
            if gap < self.tol:
                break
            Ki = kern.column(i)
            Kj = kern.column(j)
            curv = max(Ki[i] + Kj[j] - 2.0 * Ki[j], eps)
            t = min((grad[j] - grad[i]) / curv, C - alpha[i], alpha[j])
            alpha[i] += t
            alpha[j] -= t
            grad += t * (Ki - Kj)
            it += 1
        else:
            raise FitError(f"OC-SVM did not converge in {self.max_iter} iterations (gap {gap:.3g})")

        alpha = np.clip(alpha, 0.0, C)
        sv = np.flatnonzero(alpha > 0)
        self.gamma_ = gamma
        self.C_ = C
        self.alpha_ = alpha
        self.support_ = sv
        self.support_vectors_ = X[sv].copy()
        self.dual_coef_ = alpha[sv].copy()
        self.n_iter_ = it
        self.gap_ = float(max(gap, 0.0))
        self.boundary_tol_ = float(self.tol) / (nu * n)

        # rho from decision values computed exactly as at scoring time
        g = rbf_kernel(X, self.support_vectors_, gamma) @ self.dual_coef_
        free = (alpha > 1e-12 * C) & (alpha < C * (1 - 1e-12))
        if free.any():
            gf = g[free]
            self.rho_ = float(gf.min() + np.mean(gf - gf.min()))
        else:
            at_upper = alpha >= C * (1 - 1e-12)
            hi = g[~at_upper].min() if (~at_upper).any() else g.max()
            lo = g[at_upper].max() if at_upper.any() else g.min()
            self.rho_ = float(lo + (hi - lo) / 2.0)

    def decision_values(self, X):
        """Signed distance-like value ``f(x)``; negative means outside."""
        X = self._validate(X) if hasattr(self, "threshold_") else X
        return rbf_kernel(X, self.support_vectors_, self.gamma_) @ self.dual_coef_ - self.rho_

    def _score(self, X):
        return -(rbf_kernel(X, self.support_vectors_, self.gamma_) @ self.dual_coef_ - self.rho_)


DETECTORS = {
    "ocsvm": OCSVMDetector,
    "lof": LOFDetector,
    "iforest": IForestDetector,
}


def make_detector(name: str, params: dict | None = None) -> BaseDetector:
    try:
        cls = DETECTORS[name]
    except KeyError:
        raise ValueError(f"unknown detector {name!r}; known: {list(DETECTORS)}") from None
    return cls(**(params or {}))
