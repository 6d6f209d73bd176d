"""Uniform fit/predict contract for the baseline regressors."""

from __future__ import annotations

import numpy as np
import pandas as pd

from ..errors import NonFiniteInput, SchemaMismatch


def as_matrix(X) -> tuple[np.ndarray, list | None]:
    if isinstance(X, pd.DataFrame):
        return X.to_numpy(dtype=float), [str(c) for c in X.columns]
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    return arr, None


def check_finite(X: np.ndarray, y: np.ndarray | None = None) -> None:
    if not np.isfinite(X).all():
        raise NonFiniteInput("feature matrix contains missing or non-finite values")
    if y is not None and not np.isfinite(y).all():
        raise NonFiniteInput("target contains missing or non-finite values")


class Regressor:
    name = "regressor"

    def __init__(self, **hyperparameters):
        self.hyperparameters = hyperparameters
        self.feature_names: list | None = None
        self.n_features: int | None = None

    def fit(self, X, y):
        arr, names = as_matrix(X)
        y = np.asarray(y, dtype=float).ravel()
        if arr.shape[0] != y.shape[0]:
            raise ValueError("X and y have different row counts")
        check_finite(arr, y)
        self.feature_names = names
        self.n_features = arr.shape[1]
        self._fit(arr, y)
        return self

    def _align(self, X) -> np.ndarray:
        if isinstance(X, pd.DataFrame) and self.feature_names is not None:
            missing = [c for c in self.feature_names if c not in X.columns]
            extra = [c for c in X.columns if c not in self.feature_names]
            if missing or extra:
                raise SchemaMismatch(f"schema mismatch: missing {missing}, unexpected {extra}")
            X = X[self.feature_names]
        arr, _ = as_matrix(X)
        if arr.shape[0] == 0:
            return arr.reshape(0, self.n_features)
        if arr.shape[1] != self.n_features:
            raise SchemaMismatch(f"expected {self.n_features} features, got {arr.shape[1]}")
        return arr

    def predict(self, X) -> np.ndarray:
        if self.n_features is None:
            raise RuntimeError(f"{self.name} is not fitted")
        arr = self._align(X)
        if arr.shape[0] == 0:
            return np.empty(0)
        check_finite(arr)
        return self._predict(arr)

    def _fit(self, X, y):
        raise NotImplementedError

    def _predict(self, X):
        raise NotImplementedError


def predict(model: Regressor, X) -> np.ndarray:
    return model.predict(X)
