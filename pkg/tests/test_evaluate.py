import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_shapley, simplex_grid_min, slsqp_weights
from unicrop.engineer import Dataset
from unicrop.errors import LengthMismatch, NoModels, TooFewRows, TooManyFeaturesForExact
from unicrop.evaluate import (ENSEMBLE, CvSettings, compute_metrics, fit_ensemble_weights, fit_partition,
                              kfold_split, run_cv, shapley_importance)
from unicrop.evaluate.ensemble import kkt_residual

# -- folds -----------------------------------------------------------------------------


def test_kfold_sizes_557():
    folds = kfold_split(557, 5, seed=3)
    assert sorted(np.bincount(folds).tolist(), reverse=True) == [112, 112, 111, 111, 111]


def test_kfold_singletons_and_determinism():
    assert sorted(kfold_split(5, 5, 0).tolist()) == [0, 1, 2, 3, 4]
    assert np.array_equal(kfold_split(100, 5, 9), kfold_split(100, 5, 9))
    assert not np.array_equal(kfold_split(100, 5, 9), kfold_split(100, 5, 10))
    with pytest.raises(TooFewRows):
        kfold_split(4, 5)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 10), st.integers(0, 500), st.integers(0, 99))
def test_kfold_balanced(k, extra, seed):
    n = k + extra
    sizes = np.bincount(kfold_split(n, k, seed), minlength=k)
    assert sizes.max() - sizes.min() <= 1 and sizes.sum() == n


# -- metrics -----------------------------------------------------------------------------

def test_metrics_examples():
    m = compute_metrics([100, 200], [110, 180])
    assert m.rmse == pytest.approx(math.sqrt(250)) and m.mae == 15 and m.mape == pytest.approx(10.0)
    y = np.array([3.0, 5.0, 9.0])
    perfect = compute_metrics(y, y)
    assert (perfect.rmse, perfect.mae, perfect.r2, perfect.mape) == (0, 0, 1, 0)
    assert compute_metrics(y, np.full(3, y.mean())).r2 == pytest.approx(0.0)


def test_metrics_edge_cases():
    assert math.isnan(compute_metrics([2, 2], [1, 3]).r2)
    m = compute_metrics([0, 10], [1, 11])
    assert m.mape_excluded == 1 and m.mape == pytest.approx(10.0)
    with pytest.raises(LengthMismatch):
        compute_metrics([1, 2], [1, 2, 3])
    with pytest.raises(LengthMismatch):
        compute_metrics([1], [1])


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e4, 1e4).filter(lambda v: v == 0 or abs(v) > 1e-6), st.floats(-1e4, 1e4)), min_size=2, max_size=50))
def test_metric_identities(pairs):
    y, yh = map(np.array, zip(*pairs))
    m = compute_metrics(y, yh)
    assert m.mse == pytest.approx(np.mean((y - yh) ** 2), rel=1e-9, abs=1e-9)
    assert m.rmse >= m.mae - 1e-9 >= -1e-9
    assert math.isnan(m.r2) or m.r2 <= 1 + 1e-12


# -- ensemble ---------------------------------------------------------------------------

def test_ensemble_examples():
    rng = np.random.default_rng(0)
    y = rng.normal(size=50)
    one = fit_ensemble_weights(y[:, None] + 1, y)
    assert one.weights.tolist() == [1.0]
    exact = fit_ensemble_weights(np.column_stack([y, y + 1, y - 2]), y)
    assert exact.objective <= 1e-12
    d = rng.normal(size=50)
    pair = fit_ensemble_weights(np.column_stack([y + d, y - d]), y)
    np.testing.assert_allclose(pair.weights, [0.5, 0.5], atol=1e-9)
    assert pair.objective <= 1e-12
    assert simplex_grid_min(np.column_stack([y + d, y - d, y + 3 * d]), y) <= 1e-12
    with pytest.raises(NoModels):
        fit_ensemble_weights(np.empty((5, 0)), y[:5])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 4))
def test_ensemble_validity_dominance_and_kkt(seed, m):
    rng = np.random.default_rng(seed)
    n = 60
    y = rng.normal(size=n) * 100 + 5000
    P = y[:, None] + rng.normal(size=(n, m)) * rng.uniform(5, 80, m) + rng.normal(size=m) * 20
    res = fit_ensemble_weights(P, y)
    w = res.weights
    assert np.all(w >= -1e-12) and abs(w.sum() - 1) <= 1e-9
    singles = min(float(np.sum((y - P[:, i]) ** 2)) for i in range(m))
    assert res.objective <= singles + 1e-9
    assert kkt_residual(P, y, w) <= 1e-8
    if m == 3:
        assert res.objective <= simplex_grid_min(P, y) + 1e-6
        ref = slsqp_weights(P, y)
        assert res.objective <= float(np.sum((y - P @ ref) ** 2)) * (1 + 1e-9)


# -- Shapley -----------------------------------------------------------------------------

def additive(Z):
    Z = np.atleast_2d(Z)
    return Z[:, 0] + 2 * Z[:, 1]


def test_shapley_additive_example():
    att = shapley_importance(additive, [[1.0, 1.0]], [0.0, 0.0])
    np.testing.assert_allclose(att.phi[0], [1.0, 2.0], atol=1e-12)
    assert att.base == 0.0


def test_shapley_dummy_and_local_accuracy():
    def f(Z):
        Z = np.atleast_2d(Z)
        return np.sin(Z[:, 0]) * Z[:, 2] + Z[:, 3] ** 2

    rng = np.random.default_rng(1)
    X = rng.normal(size=(6, 5))
    bg = rng.normal(size=5)
    att = shapley_importance(f, X, bg)
    assert np.all(att.phi[:, 1] == 0.0) and np.all(att.phi[:, 4] == 0.0)
    np.testing.assert_allclose(att.base + att.phi.sum(axis=1), f(X), atol=1e-10)
    for r in range(2):
        np.testing.assert_allclose(att.phi[r], brute_shapley(f, X[r], bg.copy()), atol=1e-10)


def test_shapley_background_sample_averages():
    rng = np.random.default_rng(2)
    bg = rng.normal(size=(10, 2))
    att = shapley_importance(additive, [[1.0, 1.0]], bg)
    np.testing.assert_allclose(att.phi[0], [1 - bg[:, 0].mean(), 2 * (1 - bg[:, 1].mean())], atol=1e-12)


def test_shapley_sampled_converges():
    def f(Z):
        Z = np.atleast_2d(Z)
        return Z @ np.arange(1.0, 9.0) + Z[:, 0] * Z[:, 1]

    rng = np.random.default_rng(3)
    X = rng.normal(size=(3, 8))
    bg = np.zeros(8)
    exact = shapley_importance(f, X, bg).phi
    sampled = shapley_importance(f, X, bg, mode="SAMPLED", budget=5000, seed=1).phi
    assert np.abs(sampled - exact).mean() < 0.05 * np.abs(exact).max()
    # sampled attributions still satisfy local accuracy per permutation
    np.testing.assert_allclose(sampled.sum(axis=1), f(X) - f(bg), atol=1e-9)


def test_shapley_errors():
    with pytest.raises(TooManyFeaturesForExact):
        shapley_importance(lambda Z: Z.sum(axis=1), np.zeros((1, 13)), np.zeros(13))
    with pytest.raises(ValueError):
        shapley_importance(additive, [[1.0, 1.0]], [0.0, 0.0], mode="SAMPLED", budget=10)


# -- cross-validation -----------------------------------------------------------------

FAST = {"random_forest": {"trees": 20}, "gradient_boosting": {"rounds": 40}}
FAMILIES = {"t2m": "METEOROLOGY", "rh": "METEOROLOGY", "ndvi": "VEGETATION", "vh": "SAR",
            "soc": "SOIL", "slope": "TOPOGRAPHY", "noise": "SOIL"}


def small_dataset(n=120, seed=0):
    rng = np.random.default_rng(seed)
    X = pd.DataFrame({c: rng.normal(size=n) for c in FAMILIES})
    y = 5000 + 300 * X["ndvi"] + 200 * X["rh"] - 150 * X["soc"] + 50 * rng.normal(size=n)
    X.loc[rng.choice(n, 8, replace=False), "ndvi"] = np.nan
    groups = pd.DataFrame({"district": rng.choice(["a", "b"], n), "season": rng.choice(["wet", "dry"], n)})
    return Dataset(X, y.to_numpy(), [f"F{i:03d}" for i in range(n)], dict(FAMILIES), groups)


def fast_settings(**kw):
    return CvSettings(select_k=4, hyperparameters=FAST, shapley_rows=5, **kw)


@pytest.fixture(scope="module")
def cv_result():
    return run_cv(small_dataset(), fast_settings())


def test_run_cv_shapes_and_metrics(cv_result):
    assert cv_result.oof.shape == (120, 4)
    assert not cv_result.oof.isna().any().any()
    assert set(cv_result.metrics) == {"elastic_net", "random_forest", "gradient_boosting", "svr_rbf", ENSEMBLE}
    assert cv_result.metrics[ENSEMBLE].r2 > 0.5
    assert len(cv_result.fold_states) == 5
    assert all(len(s.features) == 4 for s in cv_result.fold_states)
    assert cv_result.shap["rank"].tolist() == list(range(1, len(cv_result.shap) + 1))
    assert cv_result.shap_model in cv_result.ensemble_members


def test_run_cv_deterministic(cv_result):
    again = run_cv(small_dataset(), fast_settings())
    pd.testing.assert_frame_equal(again.oof, cv_result.oof)
    assert np.array_equal(again.weights.weights, cv_result.weights.weights)
    pd.testing.assert_frame_equal(again.shap, cv_result.shap)


def test_fit_partition_ignores_validation_rows():
    data = small_dataset()
    s = fast_settings()
    folds = kfold_split(data.n, 5, 0)
    base = fit_partition(data, folds, 2, s)
    va = folds == 2
    X2 = data.X.copy()
    X2.loc[va] = 1e6
    y2 = data.y.copy()
    y2[va] = -1.0
    g2 = data.groups.copy()
    g2.loc[va, "district"] = "zzz"
    mutated = fit_partition(Dataset(X2, y2, data.field_ids, data.families, g2), folds, 2, s)
    assert mutated.selection == base.selection
    assert mutated.preprocessor.fingerprint() == base.preprocessor.fingerprint()
    probe = base.preprocessor.apply(data.X.iloc[:10], data.groups.iloc[:10])
    for name, model in base.models.items():
        assert np.array_equal(model.predict(probe), mutated.models[name].predict(probe)), name


def test_failed_learner_excluded(monkeypatch):
    from unicrop.learners import LEARNERS, SVR

    class Broken(SVR):
        def _fit(self, X, y):
            raise RuntimeError("boom")

    monkeypatch.setitem(LEARNERS, "svr_rbf", Broken)
    res = run_cv(small_dataset(n=60), fast_settings())
    assert "svr_rbf" in res.excluded
    assert res.oof["svr_rbf"].isna().all()
    assert "svr_rbf" not in res.metrics and "svr_rbf" not in res.ensemble_members
    assert len(res.weights.weights) == 3
