"""Family-aware, fold-local imputation, winsorisation and robust scaling.

Every fitted quantity is a function of the training partition only; the
``apply`` paths read nothing but the fitted state.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

WINSOR_LEVEL = 0.01
RIDGE = 1e-3
RIDGE_REFINEMENTS = 3
MAX_ROUNDS = 10
STOP_FRACTION = 1e-4
KNN_K = 5
IQR_FLOOR = 1e-12


def percentile(v: np.ndarray, q: float) -> float:
    """Linear-interpolation percentile (rank q*(n-1)), q in [0, 1]."""
    return float(np.percentile(v, 100.0 * q, method="linear"))


def _nanmedian(v: np.ndarray) -> float:
    v = v[~np.isnan(v)]
    return float(np.median(v)) if v.size else np.nan


def _iqr(v: np.ndarray) -> float:
    v = v[~np.isnan(v)]
    if v.size == 0:
        return 0.0
    return percentile(v, 0.75) - percentile(v, 0.25)


# -- median -----------------------------------------------------------------

@dataclass
class MedianImputer:
    medians: dict

    def transform(self, X: pd.DataFrame) -> pd.DataFrame:
        out = X.copy()
        for c, m in self.medians.items():
            out[c] = out[c].fillna(m)
        return out


def fit_median_imputer(X: pd.DataFrame) -> MedianImputer:
    medians = {}
    for c in X.columns:
        m = _nanmedian(X[c].to_numpy(dtype=float))
        if np.isnan(m):
            log.warning("column %s is entirely missing in training rows; imputing 0", c)
            m = 0.0
        medians[c] = m
    return MedianImputer(medians)


def median_impute(X: pd.DataFrame) -> pd.DataFrame:
    return fit_median_imputer(X).transform(X)


# -- chained ridge ------------------------------------------------------------

def _ridge(A: np.ndarray, b: np.ndarray, lam: float = RIDGE, refinements: int = RIDGE_REFINEMENTS):
    """Ridge fit with unpenalised intercept, refined by iterated Tikhonov.

    Each refinement solves the same well-posed system centred on the
    previous coefficients, which removes the ridge shrinkage along
    well-determined directions.
    """
    mu_a = A.mean(axis=0)
    mu_b = b.mean()
    Ac = A - mu_a
    bc = b - mu_b
    G = Ac.T @ Ac + lam * np.eye(A.shape[1])
    rhs = Ac.T @ bc
    beta = np.linalg.solve(G, rhs)
    for _ in range(refinements):
        beta = np.linalg.solve(G, rhs + lam * beta)
    return float(mu_b - mu_a @ beta), beta


@dataclass
class IterativeImputer:
    columns: list
    medians: np.ndarray
    iqrs: np.ndarray
    intercepts: np.ndarray
    coefs: np.ndarray  # (c, c) with zero diagonal: column j <- row j of others
    history: list = field(default_factory=list)

    def _rounds(self, filled: np.ndarray, miss: np.ndarray, models) -> list[float]:
        tol = STOP_FRACTION * np.where(self.iqrs > 0, self.iqrs, 1.0)
        targets = [j for j in range(filled.shape[1]) if miss[:, j].any()]
        history = []
        for _ in range(MAX_ROUNDS):
            converged = True
            worst = 0.0
            for j in targets:
                rows = miss[:, j]
                b0, beta = models(j)
                others = np.delete(filled[rows], j, axis=1)
                pred = b0 + others @ beta
                change = np.abs(pred - filled[rows, j])
                filled[rows, j] = pred
                worst = max(worst, float(change.max()))
                if (change >= tol[j]).any():
                    converged = False
            history.append(worst)
            if converged:
                break
        return history

    def transform(self, X: pd.DataFrame) -> pd.DataFrame:
        arr = X[self.columns].to_numpy(dtype=float)
        miss = np.isnan(arr)
        if not miss.any():
            return X.copy()
        filled = np.where(miss, self.medians, arr)

        def models(j):
            return self.intercepts[j], np.delete(self.coefs[j], j)

        self._rounds(filled, miss, models)
        out = X.copy()
        out[self.columns] = filled
        return out


def fit_iterative_imputer(X: pd.DataFrame) -> IterativeImputer:
    """Chained-equations imputer over the meteorology columns.

    Raises TooFewColumns when a multivariate fit is not possible; callers
    fall back to median imputation.
    """
    from .errors import TooFewColumns

    cols = list(X.columns)
    arr = X.to_numpy(dtype=float)
    if len(cols) < 2 or arr.shape[0] < 10:
        raise TooFewColumns(f"iterative imputation needs >= 2 columns and >= 10 rows, got {arr.shape}")
    miss = np.isnan(arr)
    medians = np.array([_nanmedian(arr[:, j]) for j in range(len(cols))])
    medians = np.where(np.isnan(medians), 0.0, medians)
    iqrs = np.array([_iqr(arr[:, j]) for j in range(len(cols))])
    filled = np.where(miss, medians, arr)
    c = len(cols)
    state = IterativeImputer(cols, medians, iqrs, np.zeros(c), np.zeros((c, c)))

    def fit_model(j):
        obs = ~miss[:, j]
        if obs.sum() < 2:
            return medians[j], np.zeros(c - 1)
        return _ridge(np.delete(filled[obs], j, axis=1), arr[obs, j])

    state.history = state._rounds(filled, miss, fit_model)
    for j in range(c):
        b0, beta = fit_model(j)
        state.intercepts[j] = b0
        state.coefs[j] = np.insert(beta, j, 0.0)
    return state


# -- KNN --------------------------------------------------------------------

def _group_keys(groups: pd.DataFrame | None, n: int) -> list:
    if groups is None:
        return [None] * n
    keys = []
    for d, s in zip(groups["district"], groups["season"]):
        keys.append(None if d is None or s is None or d != d or s != s else (d, s))
    return keys


@dataclass
class KnnImputer:
    columns: list
    reference: np.ndarray  # training rows, raw values
    ref_groups: list
    centre: np.ndarray
    spread: np.ndarray
    fallback: np.ndarray
    k: int = KNN_K
    scaled: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.scaled = (self.reference - self.centre) / self.spread

    def impute_row(self, row: np.ndarray, group) -> np.ndarray:
        out = row.copy()
        missing = np.flatnonzero(np.isnan(row))
        if missing.size == 0:
            return out
        ref_s = self.scaled
        row_s = (row - self.centre) / self.spread
        both = ~np.isnan(ref_s) & ~np.isnan(row_s)
        diff = np.where(both, ref_s - row_s, 0.0)
        dist = np.sqrt((diff * diff).sum(axis=1))
        mutual = both.sum(axis=1)
        in_group = np.array([g is not None and g == group for g in self.ref_groups]) if group is not None else None
        for j in missing:
            usable = ~np.isnan(self.reference[:, j]) & (mutual > 0)
            cand = usable
            if in_group is not None:
                grp = usable & in_group
                if grp.sum() >= self.k + 1:
                    cand = grp
            idx = np.flatnonzero(cand)
            if idx.size == 0:
                log.info("no usable neighbours for %s; using training median", self.columns[j])
                out[j] = self.fallback[j]
                continue
            order = idx[np.argsort(dist[idx], kind="stable")][: self.k]
            out[j] = float(self.reference[order, j].mean())
        return out

    def transform(self, X: pd.DataFrame, groups: pd.DataFrame | None = None) -> pd.DataFrame:
        arr = X[self.columns].to_numpy(dtype=float)
        keys = _group_keys(groups, arr.shape[0])
        filled = np.vstack([self.impute_row(arr[i], keys[i]) for i in range(arr.shape[0])]) if arr.size else arr
        out = X.copy()
        out[self.columns] = filled
        return out


def fit_knn_imputer(X: pd.DataFrame, groups: pd.DataFrame | None = None, k: int = KNN_K) -> KnnImputer:
    arr = X.to_numpy(dtype=float)
    centre = np.array([_nanmedian(arr[:, j]) for j in range(arr.shape[1])])
    spread = np.array([_iqr(arr[:, j]) for j in range(arr.shape[1])])
    spread = np.where(spread < IQR_FLOOR, 1.0, spread)
    fallback = np.where(np.isnan(centre), 0.0, centre)
    centre = fallback
    return KnnImputer(list(X.columns), arr.copy(), _group_keys(groups, arr.shape[0]), centre, spread, fallback, k)


def knn_impute(X: pd.DataFrame, groups: pd.DataFrame | None = None, k: int = KNN_K) -> pd.DataFrame:
    return fit_knn_imputer(X, groups, k).transform(X, groups)


# -- winsorise / scale --------------------------------------------------------

def winsor_bounds(v: np.ndarray, level: float = WINSOR_LEVEL) -> tuple[float, float]:
    v = v[~np.isnan(v)]
    return percentile(v, level), percentile(v, 1.0 - level)


def winsorize(v, bounds=None, level: float = WINSOR_LEVEL):
    """Clip into training percentile bounds. Returns (clipped, bounds)."""
    v = np.asarray(v, dtype=float)
    if bounds is None:
        bounds = winsor_bounds(v, level)
    return np.clip(v, bounds[0], bounds[1]), bounds


def robust_params(v: np.ndarray) -> tuple[float, float]:
    v = v[~np.isnan(v)]
    med = float(np.median(v))
    iqr = percentile(v, 0.75) - percentile(v, 0.25)
    return med, (iqr if iqr >= IQR_FLOOR else 1.0)


def robust_scale(v, params=None):
    """(x - median) / IQR. Returns (scaled, (median, divisor))."""
    v = np.asarray(v, dtype=float)
    if params is None:
        params = robust_params(v)
    return (v - params[0]) / params[1], params


# -- fold pipeline ------------------------------------------------------------

@dataclass
class FoldPreprocessor:
    columns: list
    families: dict
    imputer_kind: dict  # column -> iterative | knn | median
    iterative: IterativeImputer | None
    knn: KnnImputer | None
    median: MedianImputer
    bounds: dict
    scale: dict

    def apply(self, X: pd.DataFrame, groups: pd.DataFrame | None = None) -> pd.DataFrame:
        out = X[self.columns].copy()
        if self.iterative is not None:
            out = self.iterative.transform(out)
        if self.knn is not None:
            out = self.knn.transform(out, groups)
        out = self.median.transform(out)
        for c in self.columns:
            clipped, _ = winsorize(out[c].to_numpy(dtype=float), self.bounds[c])
            out[c], _ = robust_scale(clipped, self.scale[c])
        return out

    def records(self) -> list[dict]:
        """Flat per-column parameter dump (also used for leakage checks)."""
        rows = []
        for c in self.columns:
            kind = self.imputer_kind[c]
            if kind == "iterative":
                j = self.iterative.columns.index(c)
                centre = self.iterative.medians[j]
                detail = [self.iterative.intercepts[j], *self.iterative.coefs[j]]
            elif kind == "knn":
                j = self.knn.columns.index(c)
                centre = self.knn.fallback[j]
                detail = [self.knn.centre[j], self.knn.spread[j]]
            else:
                centre = self.median.medians[c]
                detail = []
            rows.append({
                "column": c,
                "family": self.families.get(c, ""),
                "imputer": kind,
                "impute_centre": float(centre),
                "imputer_params": " ".join(repr(float(x)) for x in detail),
                "winsor_low": self.bounds[c][0],
                "winsor_high": self.bounds[c][1],
                "median": self.scale[c][0],
                "iqr": self.scale[c][1],
            })
        return rows

    def fingerprint(self) -> tuple:
        """Everything fitted, as plain comparable values."""
        knn_ref = None
        if self.knn is not None:
            knn_ref = (tuple(map(tuple, np.where(np.isnan(self.knn.reference), -np.inf,
                                                 self.knn.reference).tolist())),
                       tuple(self.knn.ref_groups))
        hist = tuple(self.iterative.history) if self.iterative is not None else ()
        return tuple(tuple(sorted(r.items())) for r in self.records()) + (knn_ref, hist)


def fit_fold_pipeline(X: pd.DataFrame, families: dict, groups: pd.DataFrame | None = None,
                      knn_k: int = KNN_K) -> FoldPreprocessor:
    """Fit imputation -> winsorisation -> robust scaling on training rows."""
    from .errors import TooFewColumns

    cols = list(X.columns)
    meteo = [c for c in cols if families.get(c) == "METEOROLOGY"]
    veg = [c for c in cols if families.get(c) == "VEGETATION"]
    kind = {c: "median" for c in cols}

    work = X.copy()
    iterative = None
    if meteo:
        try:
            iterative = fit_iterative_imputer(work[meteo])
            kind.update({c: "iterative" for c in meteo})
            work = iterative.transform(work)
        except TooFewColumns as exc:
            log.info("%s; median imputation for meteorology", exc)
    knn = None
    if veg:
        knn = fit_knn_imputer(work[veg], groups, knn_k)
        kind.update({c: "knn" for c in veg})
        work = knn.transform(work, groups)
    median = fit_median_imputer(X[[c for c in cols if kind[c] == "median"]])
    work = median.transform(work)

    bounds, scale = {}, {}
    for c in cols:
        v = work[c].to_numpy(dtype=float)
        bounds[c] = winsor_bounds(v)
        clipped, _ = winsorize(v, bounds[c])
        scale[c] = robust_params(clipped)
    return FoldPreprocessor(cols, dict(families), kind, iterative, knn, median, bounds, scale)


PREPROCESS_COLUMNS = ["column", "family", "imputer", "impute_centre", "imputer_params",
                      "winsor_low", "winsor_high", "median", "iqr"]


def write_preprocess(pre: FoldPreprocessor, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, PREPROCESS_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in pre.records():
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
