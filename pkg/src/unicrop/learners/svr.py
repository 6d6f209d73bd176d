"""Epsilon-insensitive RBF support-vector regression solved by SMO.

The dual is the 2n-variable form (one alpha per side of the tube) with a
single equality constraint; each step updates the maximal-violating pair
chosen with second-order working-set selection.
"""

from __future__ import annotations

import warnings

import numpy as np
from numba import njit

from ..errors import NonConvergence
from .base import Regressor

SVR_DEFAULTS = {"C": 10.0, "epsilon": 0.1, "gamma": None, "tol": 1e-3, "max_passes": 50}
TAU = 1e-12


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    sq = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * A @ B.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


@njit(cache=True)
def _smo(K, y, C, eps, tol, max_iter):
    n = y.shape[0]
    m = 2 * n
    sign = np.empty(m)
    grad = np.empty(m)
    alpha = np.zeros(m)
    for t in range(n):
        sign[t] = 1.0
        sign[t + n] = -1.0
        grad[t] = eps - y[t]
        grad[t + n] = eps + y[t]
    it = 0
    converged = False
    while it < max_iter:
        # working set: i maximises -s*G over I_up
        gmax = -np.inf
        i = -1
        for t in range(m):
            if (sign[t] > 0 and alpha[t] < C) or (sign[t] < 0 and alpha[t] > 0):
                v = -sign[t] * grad[t]
                if v >= gmax:
                    gmax = v
                    i = t
        gmax2 = -np.inf
        j = -1
        best = np.inf
        ii = i % n if i >= 0 else 0
        for t in range(m):
            if (sign[t] > 0 and alpha[t] > 0) or (sign[t] < 0 and alpha[t] < C):
                v = sign[t] * grad[t]
                if v >= gmax2:
                    gmax2 = v
                b = gmax + v
                if i >= 0 and b > 0:
                    tt = t % n
                    a = K[ii, ii] + K[tt, tt] - 2.0 * K[ii, tt]
                    if a <= 0:
                        a = 1e-12
                    obj = -(b * b) / a
                    if obj <= best:
                        best = obj
                        j = t
        if gmax + gmax2 < tol or j < 0:
            converged = True
            break
        it += 1
        ji = j % n
        kij = K[ii, ji]
        old_i = alpha[i]
        old_j = alpha[j]
        quad = K[ii, ii] + K[ji, ji] - 2.0 * kij
        if quad <= 0:
            quad = 1e-12
        if sign[i] != sign[j]:
            delta = (-grad[i] - grad[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = total
            if total > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = total
        di = alpha[i] - old_i
        dj = alpha[j] - old_j
        for t in range(m):
            tt = t % n
            grad[t] += sign[t] * (sign[i] * K[ii, tt] * di + sign[j] * K[ji, tt] * dj)

    # offset from free variables, else the midpoint of the feasible interval
    ub = np.inf
    lb = -np.inf
    total = 0.0
    n_free = 0
    for t in range(m):
        yg = sign[t] * grad[t]
        if alpha[t] >= C:
            if sign[t] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif alpha[t] <= 0:
            if sign[t] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            n_free += 1
            total += yg
    rho = total / n_free if n_free > 0 else (ub + lb) / 2.0
    return alpha[:n] - alpha[n:], rho, it, converged


class SVR(Regressor):
    """RBF epsilon-SVR. The target is standardised internally, so
    ``epsilon`` is in target standard deviations."""

    name = "svr_rbf"

    def __init__(self, seed=0, **hp):
        super().__init__(**{**SVR_DEFAULTS, **hp})
        self.seed = seed
        self.converged_ = True

    def _fit(self, X, y):
        hp = self.hyperparameters
        n, p = X.shape
        gamma = hp["gamma"]
        if gamma is None:
            var = float(X.var())
            gamma = 1.0 / (p * var) if var > 0 else 1.0
        self.gamma_ = gamma
        self.y_mean_ = float(y.mean())
        sd = float(y.std())
        self.y_scale_ = sd if sd > 0 else 1.0
        ys = (y - self.y_mean_) / self.y_scale_
        K = rbf_kernel(X, X, gamma)
        max_iter = int(hp["max_passes"]) * 2 * n
        beta, rho, iters, converged = _smo(K, ys, float(hp["C"]), float(hp["epsilon"]),
                                           float(hp["tol"]), max_iter)
        self.n_iter_ = int(iters)
        self.converged_ = bool(converged)
        if not converged:
            warnings.warn(NonConvergence(f"SMO stopped after {iters} updates without meeting tol"),
                          stacklevel=2)
        support = beta != 0
        self.support_ = X[support].copy()
        self.dual_coef_ = beta[support]
        self.beta_ = beta
        self.rho_ = float(rho)

    def decision_function(self, X) -> np.ndarray:
        """Prediction in standardised target units."""
        if self.dual_coef_.size == 0:
            return np.full(X.shape[0], -self.rho_)
        return rbf_kernel(X, self.support_, self.gamma_) @ self.dual_coef_ - self.rho_

    def _predict(self, X):
        return self.y_mean_ + self.y_scale_ * self.decision_function(X)


def fit_svr_rbf(X, y, hp=None, seed=0) -> SVR:
    return SVR(seed=seed, **(hp or {})).fit(X, y)
