"""Leakage-free k-fold cross-validation over the field-level dataset."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ..engineer import Dataset
from ..errors import ModellingError, TooFewRows
from ..learners import LEARNERS
from ..preprocess import KNN_K, FoldPreprocessor, fit_fold_pipeline
from ..selection import DEFAULT_EPSILON, DEFAULT_K, RATIO, SelectionReport, screen_and_select
from .ensemble import EnsembleWeights, fit_ensemble_weights
from .metrics import compute_metrics
from .shapley import EXACT, MAX_EXACT_FEATURES, SAMPLED, shapley_importance

log = logging.getLogger(__name__)

LEARNER_ORDER = ("elastic_net", "random_forest", "gradient_boosting", "svr_rbf")
ENSEMBLE = "ensemble"


def kfold_split(n: int, k: int = 5, seed: int = 0) -> np.ndarray:
    """Fold index per row: a seeded shuffle dealt into contiguous blocks.

    The first ``n % k`` folds get one extra row.
    """
    if k < 2 or n < k:
        raise TooFewRows(f"cannot split {n} rows into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    base, extra = divmod(n, k)
    folds = np.empty(n, dtype=np.int64)
    start = 0
    for f in range(k):
        size = base + (1 if f < extra else 0)
        folds[perm[start:start + size]] = f
        start += size
    return folds


@dataclass
class CvSettings:
    select_k: int = DEFAULT_K
    criterion: str = RATIO
    epsilon: float = DEFAULT_EPSILON
    folds: int = 5
    cv_seed: int = 0
    learner_seed: int = 0
    learners: tuple = LEARNER_ORDER
    hyperparameters: dict = field(default_factory=dict)  # learner -> overrides
    knn_k: int = KNN_K
    shapley_mode: str = "AUTO"
    shapley_budget: int = 200
    shapley_rows: int = 40
    shapley_seed: int = 0


@dataclass
class FoldState:
    fold: int
    train_index: np.ndarray
    valid_index: np.ndarray
    selection: SelectionReport
    preprocessor: FoldPreprocessor
    models: dict
    failures: dict
    train_medians: np.ndarray

    @property
    def features(self) -> list[str]:
        return self.selection.features


@dataclass
class CvResult:
    field_ids: list
    y: np.ndarray
    folds: np.ndarray
    fold_states: list
    oof: pd.DataFrame  # one column per learner (NaN for excluded learners)
    excluded: dict  # learner -> reason
    weights: EnsembleWeights | None
    ensemble_members: list
    metrics: dict  # model -> MetricSet
    shap: pd.DataFrame | None = None  # feature, mean_abs_phi, rank
    shap_model: str | None = None
    settings: CvSettings | None = None

    @property
    def ensemble_oof(self) -> np.ndarray | None:
        if self.weights is None:
            return None
        return self.weights.combine(self.oof[self.ensemble_members].to_numpy())


def fit_fold(X: pd.DataFrame, y: np.ndarray, groups: pd.DataFrame, families: dict,
             settings: CvSettings, fold: int = 0) -> tuple:
    """Fit selection, preprocessing and all learners on one training partition."""
    report = screen_and_select(X, y, families, k=settings.select_k, mode=settings.criterion,
                               epsilon=settings.epsilon)
    feats = report.features
    if not feats:
        raise ModellingError(f"fold {fold}: no features selected")
    pre = fit_fold_pipeline(X[feats], families, groups, knn_k=settings.knn_k)
    Xt = pre.apply(X[feats], groups)
    models, failures = {}, {}
    for offset, name in enumerate(settings.learners):
        cls = LEARNERS[name]
        hp = settings.hyperparameters.get(name, {})
        try:
            models[name] = cls(seed=settings.learner_seed + 1000 * fold + offset, **hp).fit(Xt, y)
        except Exception as exc:
            log.warning("fold %d: %s failed: %s", fold, name, exc)
            failures[name] = f"{type(exc).__name__}: {exc}"
    return report, pre, models, failures, Xt.median(axis=0).to_numpy()


def fit_partition(data: Dataset, folds: np.ndarray, f: int, settings: CvSettings) -> FoldState:
    """Fit fold ``f`` from its training rows only."""
    tr = np.flatnonzero(folds != f)
    va = np.flatnonzero(folds == f)
    Xtr = data.X.iloc[tr].reset_index(drop=True)
    gtr = data.groups.iloc[tr].reset_index(drop=True)
    report, pre, models, failures, medians = fit_fold(Xtr, data.y[tr], gtr, data.families, settings, f)
    return FoldState(f, tr, va, report, pre, models, failures, medians)


def run_cv(data: Dataset, settings: CvSettings | None = None) -> CvResult:
    settings = settings or CvSettings()
    n = data.n
    folds = kfold_split(n, settings.folds, settings.cv_seed)
    oof = np.full((n, len(settings.learners)), np.nan)
    states = []
    excluded: dict = {}
    for f in range(settings.folds):
        st = fit_partition(data, folds, f, settings)
        va = st.valid_index
        Xva = st.preprocessor.apply(data.X.iloc[va].reset_index(drop=True),
                                    data.groups.iloc[va].reset_index(drop=True))
        for j, name in enumerate(settings.learners):
            if name in st.models:
                try:
                    pred = st.models[name].predict(Xva)
                    if not np.all(np.isfinite(pred)):
                        raise ModellingError("non-finite predictions")
                    oof[va, j] = pred
                    continue
                except Exception as exc:
                    st.failures[name] = f"{type(exc).__name__}: {exc}"
            excluded.setdefault(name, f"fold {f}: {st.failures[name]}")
        states.append(st)

    oof_df = pd.DataFrame(oof, columns=list(settings.learners))
    for name in excluded:
        oof_df[name] = np.nan
    members = [m for m in settings.learners if m not in excluded]
    metrics = {}
    for name in members:
        metrics[name] = compute_metrics(data.y, oof_df[name].to_numpy())
    weights = None
    if members:
        weights = fit_ensemble_weights(oof_df[members].to_numpy(), data.y)
        metrics[ENSEMBLE] = compute_metrics(data.y, weights.combine(oof_df[members].to_numpy()))
    else:
        log.error("every learner failed; no ensemble")
    result = CvResult(list(data.field_ids), data.y.copy(), folds, states, oof_df, excluded, weights,
                      members, metrics, settings=settings)
    if members and settings.shapley_rows > 0:
        result.shap_model = min(members, key=lambda m: (metrics[m].rmse, m))
        result.shap = _global_shap(data, result, settings)
    return result


def _global_shap(data: Dataset, result: CvResult, settings: CvSettings) -> pd.DataFrame:
    """Mean |phi| per feature over explained validation rows of every fold.

    Each fold explains its own fitted model on up to ``shapley_rows`` of
    its validation rows; a feature not selected in a fold contributes 0.
    """
    totals: dict[str, float] = {}
    count = 0
    for st in result.fold_states:
        feats = st.features
        rows = st.valid_index[: settings.shapley_rows]
        Xva = st.preprocessor.apply(data.X.iloc[rows].reset_index(drop=True),
                                    data.groups.iloc[rows].reset_index(drop=True))
        mode = settings.shapley_mode.upper()
        if mode == "AUTO":
            mode = EXACT if len(feats) <= MAX_EXACT_FEATURES else SAMPLED
        att = shapley_importance(st.models[result.shap_model], Xva.to_numpy(), st.train_medians, mode=mode,
                                 budget=settings.shapley_budget, seed=settings.shapley_seed + st.fold,
                                 features=feats)
        for name, value in zip(feats, np.abs(att.phi).sum(axis=0)):
            totals[name] = totals.get(name, 0.0) + float(value)
        count += len(rows)
    for name in data.X.columns:
        totals.setdefault(name, 0.0)
    table = pd.DataFrame({"feature": list(totals), "mean_abs_phi": [v / max(count, 1) for v in totals.values()]})
    table = table[table["mean_abs_phi"] > 0] if (table["mean_abs_phi"] > 0).any() else table
    table = table.sort_values(["mean_abs_phi", "feature"], ascending=[False, True]).reset_index(drop=True)
    table["rank"] = np.arange(1, len(table) + 1)
    return table

