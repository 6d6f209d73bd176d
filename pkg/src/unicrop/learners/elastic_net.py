"""Elastic net by cyclic coordinate descent with an unpenalised intercept."""

from __future__ import annotations

import logging

import numpy as np
from numba import njit

from .base import Regressor, as_matrix

log = logging.getLogger(__name__)

EN_DEFAULTS = {"alpha": 0.1, "l1_ratio": 0.5, "max_iter": 10000, "tol": 1e-6}


@njit(cache=True)
def _cd(G, c, alpha, l1_ratio, max_iter, tol):
    """Coordinate descent on the covariance form.

    G = Xc'Xc/n and c = Xc'yc/n for centred data; returns (w, sweeps).
    """
    p = G.shape[0]
    w = np.zeros(p)
    l1 = alpha * l1_ratio
    l2 = alpha * (1.0 - l1_ratio)
    sweeps = 0
    for it in range(max_iter):
        sweeps = it + 1
        max_step = 0.0
        for j in range(p):
            denom = G[j, j] + l2
            if denom <= 0.0:
                new = 0.0
            else:
                z = c[j]
                for k in range(p):
                    z -= G[j, k] * w[k]
                z += G[j, j] * w[j]
                if z > l1:
                    new = (z - l1) / denom
                elif z < -l1:
                    new = (z + l1) / denom
                else:
                    new = 0.0
            step = abs(new - w[j])
            if step > max_step:
                max_step = step
            w[j] = new
        if max_step < tol:
            break
    return w, sweeps


class ElasticNet(Regressor):
    name = "elastic_net"

    def __init__(self, seed=0, **hp):
        super().__init__(**{**EN_DEFAULTS, **hp})
        self.seed = seed
        self.coef_ = None
        self.intercept_ = 0.0
        self.n_iter_ = 0

    def _fit(self, X, y):
        hp = self.hyperparameters
        n = X.shape[0]
        x_mean = X.mean(axis=0)
        y_mean = float(y.mean())
        Xc = X - x_mean
        yc = y - y_mean
        G = Xc.T @ Xc / n
        c = Xc.T @ yc / n
        w, sweeps = _cd(G, c, float(hp["alpha"]), float(hp["l1_ratio"]), int(hp["max_iter"]),
                        float(hp["tol"]))
        if sweeps >= hp["max_iter"]:
            log.warning("elastic net hit max_iter=%d before converging", hp["max_iter"])
        self.coef_ = w
        self.intercept_ = y_mean - float(x_mean @ w)
        self.n_iter_ = int(sweeps)

    def _predict(self, X):
        return X @ self.coef_ + self.intercept_

    def kkt_violation(self, X, y) -> float:
        """Largest subgradient-optimality violation over the coefficients."""
        X, _ = as_matrix(X)
        y = np.asarray(y, dtype=float)
        hp = self.hyperparameters
        n = X.shape[0]
        resid = y - self.predict(X)
        grad = X.T @ resid / n - hp["alpha"] * (1 - hp["l1_ratio"]) * self.coef_
        l1 = hp["alpha"] * hp["l1_ratio"]
        w = self.coef_
        viol = np.where(w != 0, np.abs(grad - l1 * np.sign(w)), np.maximum(0.0, np.abs(grad) - l1))
        return float(viol.max()) if viol.size else 0.0


def fit_elastic_net(X, y, hp=None, seed=0) -> ElasticNet:
    return ElasticNet(seed=seed, **(hp or {})).fit(X, y)
