"""Interventional Shapley attribution by subset enumeration or permutation sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import TooManyFeaturesForExact

EXACT = "EXACT"
SAMPLED = "SAMPLED"
MAX_EXACT_FEATURES = 12
MIN_BUDGET = 100


@dataclass
class ShapleyAttribution:
    phi: np.ndarray  # (rows, features)
    base: float
    features: list

    @property
    def importance(self) -> np.ndarray:
        return np.abs(self.phi).mean(axis=0) if self.phi.size else np.zeros(len(self.features))


def _predictor(model):
    return model.predict if hasattr(model, "predict") else model


def _values(f, x, background, masks):
    """v(mask) = mean model output over background rows with the masked
    features taken from ``x``. ``masks`` is (k, p) bool."""
    b = background.shape[0]
    comp = np.where(masks[:, None, :], x[None, None, :], background[None, :, :])
    out = np.asarray(f(comp.reshape(-1, x.size)), dtype=float)
    return out.reshape(masks.shape[0], b).mean(axis=1)


def _exact(f, X, background):
    n, p = X.shape
    codes = np.arange(2**p)
    masks = ((codes[:, None] >> np.arange(p)) & 1).astype(bool)
    sizes = masks.sum(axis=1)
    weight = np.array([math.factorial(s) * math.factorial(p - s - 1) / math.factorial(p) if s < p else 0.0
                       for s in range(p + 1)])
    phi = np.zeros((n, p))
    base = None
    for r in range(n):
        v = _values(f, X[r], background, masks)
        base = v[0]
        for j in range(p):
            without = codes[((codes >> j) & 1) == 0]
            phi[r, j] = float(np.sum(weight[sizes[without]] * (v[without | (1 << j)] - v[without])))
    if base is None:
        base = float(np.mean(f(background)))
    return phi, float(base)


def _sampled(f, X, background, budget, rng):
    n, p = X.shape
    perms = np.array([rng.permutation(p) for _ in range(budget)])
    # masks[k, s] has the first s features of permutation k switched on
    masks = np.zeros((budget, p + 1, p), dtype=bool)
    for s in range(1, p + 1):
        masks[:, s] = masks[:, s - 1]
        masks[np.arange(budget), s, perms[:, s - 1]] = True
    flat = masks.reshape(-1, p)
    phi = np.zeros((n, p))
    base = float(np.mean(f(background)))
    for r in range(n):
        v = _values(f, X[r], background, flat).reshape(budget, p + 1)
        contrib = np.diff(v, axis=1)  # (budget, p): contribution of perms[:, s]
        acc = np.zeros(p)
        np.add.at(acc, perms.ravel(), contrib.ravel())
        phi[r] = acc / budget
    return phi, base


def shapley_importance(model, X_explain, background, mode=EXACT, budget=1000, seed=0,
                       features=None) -> ShapleyAttribution:
    """Attribute predictions of ``model`` on ``X_explain``.

    ``background`` is one reference row or a sample of rows; features
    outside a coalition take background values and outputs are averaged
    over the background rows.
    """
    f = _predictor(model)
    X = np.atleast_2d(np.asarray(X_explain, dtype=float))
    bg = np.atleast_2d(np.asarray(background, dtype=float))
    p = X.shape[1]
    if bg.shape[1] != p:
        raise ValueError("background and explained rows have different feature counts")
    names = list(features) if features is not None else [f"x{j}" for j in range(p)]
    mode = mode.upper()
    if mode == EXACT:
        if p > MAX_EXACT_FEATURES:
            raise TooManyFeaturesForExact(f"exact Shapley supports at most {MAX_EXACT_FEATURES} features, got {p}")
        phi, base = _exact(f, X, bg)
    elif mode == SAMPLED:
        if budget < MIN_BUDGET:
            raise ValueError(f"sampled Shapley needs a budget of at least {MIN_BUDGET} permutations")
        phi, base = _sampled(f, X, bg, int(budget), np.random.default_rng(seed))
    else:
        raise ValueError(f"unknown Shapley mode {mode!r}")
    return ShapleyAttribution(phi, base, names)
