"""Simplex-constrained least-squares combination of model predictions.

Solves min ||y - P w||^2 subject to w >= 0, sum(w) = 1 by visiting every
support set: on each support the equality-constrained problem is a small
linear KKT system, and the best feasible candidate is the global optimum
of the convex problem. The model count is small (one column per learner),
so the 2^m - 1 supports are cheap.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from ..errors import NoModels

KKT_TOL = 1e-8


@dataclass(frozen=True)
class EnsembleWeights:
    weights: np.ndarray
    objective: float
    kkt_residual: float

    def combine(self, P) -> np.ndarray:
        return np.asarray(P, dtype=float) @ self.weights


def _objective(R: np.ndarray, w: np.ndarray) -> float:
    r = R @ w
    return float(r @ r)


def kkt_residual(P, y, w) -> float:
    """Scaled violation of the simplex-LS optimality conditions at ``w``."""
    R = np.asarray(y, dtype=float)[:, None] - np.asarray(P, dtype=float)
    g = 2.0 * R.T @ (R @ w)
    support = w > 1e-12
    mu = g[support].min() if support.any() else g.min()
    scale = max(1.0, float(np.abs(g).max()))
    viol = np.where(support, np.abs(g - mu), np.maximum(0.0, mu - g))
    return float(viol.max()) / scale


def fit_ensemble_weights(P, y) -> EnsembleWeights:
    P = np.asarray(P, dtype=float)
    y = np.asarray(y, dtype=float)
    if P.ndim != 2 or P.shape[1] == 0:
        raise NoModels("no model predictions to combine")
    n, m = P.shape
    # with sum(w) = 1, y - P w = (y - p_i) combined by w
    R = y[:, None] - P
    H = R.T @ R
    # unit-diagonal scale keeps the bordered KKT matrix well conditioned
    H = H / max(float(np.abs(np.diag(H)).max()), np.finfo(float).tiny)
    best_w, best_obj = None, np.inf
    for size in range(1, m + 1):
        for support in itertools.combinations(range(m), size):
            S = list(support)
            kkt = np.zeros((size + 1, size + 1))
            kkt[:size, :size] = 2.0 * H[np.ix_(S, S)]
            kkt[:size, size] = 1.0
            kkt[size, :size] = 1.0
            rhs = np.zeros(size + 1)
            rhs[size] = 1.0
            try:
                sol = np.linalg.solve(kkt, rhs)[:size]
            except np.linalg.LinAlgError:
                sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0][:size]
            if not np.all(np.isfinite(sol)) or sol.min() < -1e-12:
                continue
            w = np.zeros(m)
            w[S] = np.maximum(sol, 0.0)
            total = w.sum()
            if total <= 0:
                continue
            w /= total
            obj = _objective(R, w)
            if obj < best_obj:
                best_w, best_obj = w, obj
    return EnsembleWeights(best_w, best_obj, kkt_residual(P, y, best_w))
