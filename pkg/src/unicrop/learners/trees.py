"""Exact-greedy regression trees, bagged forests and least-squares boosting."""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .base import Regressor


GAIN_TIE = 1e-10


class Tree:
    """Array-encoded binary regression tree (``feature == -1`` marks a leaf)."""

    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self, feature, threshold, left, right, value):
        self.feature = np.ascontiguousarray(feature, dtype=np.int64)
        self.threshold = np.ascontiguousarray(threshold, dtype=np.float64)
        self.left = np.ascontiguousarray(left, dtype=np.int64)
        self.right = np.ascontiguousarray(right, dtype=np.int64)
        self.value = np.ascontiguousarray(value, dtype=np.float64)

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    def apply(self, X: np.ndarray) -> np.ndarray:
        return _apply(np.ascontiguousarray(X, dtype=np.float64), self.feature, self.threshold,
                      self.left, self.right)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]


@njit(cache=True)
def _apply(X, feature, threshold, left, right):
    out = np.empty(X.shape[0], dtype=np.int64)
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@njit(cache=True)
def _grow(X, y, rows, max_depth, min_leaf, mtry, seed):
    """Exact-greedy variance-reduction tree over ``rows``.

    max_depth < 0 means unlimited; mtry >= p means all features per node.
    """
    np.random.seed(seed)
    n_rows = rows.shape[0]
    p = X.shape[1]
    cap = 2 * n_rows + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    idx = rows.copy()
    feats = np.arange(p)
    xbuf = np.empty(n_rows)
    ybuf = np.empty(n_rows)

    st_node = np.empty(cap, dtype=np.int64)
    st_lo = np.empty(cap, dtype=np.int64)
    st_hi = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    top = 0
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = n_rows
    st_depth[0] = 0
    top = 1
    n_nodes = 1
    while top > 0:
        top -= 1
        node = st_node[top]
        lo = st_lo[top]
        hi = st_hi[top]
        depth = st_depth[top]
        m = hi - lo
        ymin = y[idx[lo]]
        ymax = ymin
        total = 0.0
        for r in range(lo, hi):
            v = y[idx[r]]
            total += v
            if v < ymin:
                ymin = v
            if v > ymax:
                ymax = v
        if ymin == ymax:
            value[node] = ymin
            continue
        mean = total / m
        value[node] = mean
        if m < 2 * min_leaf or (max_depth >= 0 and depth >= max_depth):
            continue
        n_feat = p
        if mtry < p:
            # partial Fisher-Yates draw of mtry distinct features
            for a in range(mtry):
                b = a + np.random.randint(p - a)
                t = feats[a]
                feats[a] = feats[b]
                feats[b] = t
            n_feat = mtry
        ss = 0.0
        for r in range(lo, hi):
            d = y[idx[r]] - mean
            ss += d * d
        # later candidates must win by a margin, so rounding noise cannot reorder near-ties
        margin = GAIN_TIE * ss
        best_gain = -np.inf
        best_f = -1
        best_thr = 0.0
        for a in range(n_feat):
            f = feats[a]
            for r in range(m):
                xbuf[r] = X[idx[lo + r], f]
            order = np.argsort(xbuf[:m], kind="mergesort")
            csum = 0.0
            for r in range(m):
                ybuf[r] = y[idx[lo + order[r]]] - mean
                csum += ybuf[r]
            tot = csum
            csum = 0.0
            for r in range(m - 1):
                csum += ybuf[r]
                nl = r + 1
                nr = m - nl
                if nl < min_leaf:
                    continue
                if nr < min_leaf:
                    break
                x0 = xbuf[order[r]]
                x1 = xbuf[order[r + 1]]
                if not x0 < x1:
                    continue
                rs = tot - csum
                gain = csum * csum / nl + rs * rs / nr - tot * tot / m
                if gain > best_gain + margin:
                    best_gain = gain
                    best_f = f
                    thr = (x0 + x1) / 2.0
                    if not (x0 <= thr and thr < x1):
                        thr = x0
                    best_thr = thr
        if best_f < 0 or best_gain <= 1e-12 * ss:
            continue
        # in-place partition of idx[lo:hi]
        i = lo
        j = hi - 1
        while i <= j:
            if X[idx[i], best_f] <= best_thr:
                i += 1
            else:
                t = idx[i]
                idx[i] = idx[j]
                idx[j] = t
                j -= 1
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        n_nodes += 2
        st_node[top] = right[node]
        st_lo[top] = i
        st_hi[top] = hi
        st_depth[top] = depth + 1
        top += 1
        st_node[top] = left[node]
        st_lo[top] = lo
        st_hi[top] = i
        st_depth[top] = depth + 1
        top += 1
    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes],
            value[:n_nodes])


def grow_tree(X: np.ndarray, y: np.ndarray, seed: int = 0, max_depth=None, min_leaf=1, mtry=None,
              rows=None) -> Tree:
    """Grow a variance-reduction tree with exact greedy splits.

    ``mtry`` features are drawn per node when given; ``rows`` selects the
    training rows (duplicates allowed, as for bootstrap samples).
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n, p = X.shape
    rows = np.arange(n, dtype=np.int64) if rows is None else np.asarray(rows, dtype=np.int64)
    parts = _grow(X, y, rows, -1 if max_depth is None else int(max_depth), int(min_leaf),
                  p if mtry is None else int(mtry), int(seed) % (2**32))
    return Tree(*parts)


RF_DEFAULTS = {"trees": 300, "mtry": None, "min_leaf": 2, "bootstrap": True}


class RandomForest(Regressor):
    """Bagged regression trees; ``mtry`` defaults to ceil(p / 3)."""

    name = "random_forest"

    def __init__(self, seed=0, **hp):
        super().__init__(**{**RF_DEFAULTS, **hp})
        self.seed = seed
        self.trees: list[Tree] = []

    def _fit(self, X, y):
        hp = self.hyperparameters
        n, p = X.shape
        mtry = hp["mtry"] or max(1, math.ceil(p / 3))
        children = np.random.SeedSequence(self.seed).spawn(hp["trees"])
        self.trees = []
        for ss in children:
            rng = np.random.default_rng(ss)
            rows = rng.integers(0, n, size=n) if hp["bootstrap"] else None
            node_seed = int(rng.integers(2**32))
            self.trees.append(grow_tree(X, y, node_seed, min_leaf=hp["min_leaf"], mtry=mtry, rows=rows))

    def _predict(self, X):
        total = np.zeros(X.shape[0])
        for t in self.trees:
            total += t.predict(X)
        return total / len(self.trees)


GB_DEFAULTS = {"rounds": 500, "learning_rate": 0.05, "max_depth": 3, "subsample": 0.8, "min_leaf": 5}


class GradientBoosting(Regressor):
    """Stagewise least-squares boosting from the target mean."""

    name = "gradient_boosting"

    def __init__(self, seed=0, **hp):
        super().__init__(**{**GB_DEFAULTS, **hp})
        self.seed = seed
        self.init_ = 0.0
        self.trees: list[Tree] = []
        self.train_loss: list[float] = []

    def _fit(self, X, y):
        hp = self.hyperparameters
        n = X.shape[0]
        rng = np.random.default_rng(self.seed)
        self.init_ = float(y.mean())
        F = np.full(n, self.init_)
        self.trees = []
        self.train_loss = [float(np.mean((y - F) ** 2))]
        size = max(1, int(round(hp["subsample"] * n)))
        for _ in range(hp["rounds"]):
            resid = y - F
            rows = np.sort(rng.choice(n, size=size, replace=False)) if size < n else None
            tree = grow_tree(X, resid, max_depth=hp["max_depth"], min_leaf=hp["min_leaf"], rows=rows)
            F = F + hp["learning_rate"] * tree.predict(X)
            self.trees.append(tree)
            self.train_loss.append(float(np.mean((y - F) ** 2)))

    def _predict(self, X):
        lr = self.hyperparameters["learning_rate"]
        out = np.full(X.shape[0], self.init_)
        for t in self.trees:
            out += lr * t.predict(X)
        return out


def fit_random_forest(X, y, hp=None, seed=0) -> RandomForest:
    return RandomForest(seed=seed, **(hp or {})).fit(X, y)


def fit_gradient_boosting(X, y, hp=None, seed=0) -> GradientBoosting:
    return GradientBoosting(seed=seed, **(hp or {})).fit(X, y)
