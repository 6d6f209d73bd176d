import warnings

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.svm import SVR as SkSVR

from oracles import ols
from unicrop.errors import NonConvergence, NonFiniteInput, SchemaMismatch
from unicrop.learners import (LEARNERS, fit_elastic_net, fit_gradient_boosting, fit_random_forest,
                              fit_svr_rbf, predict)

SMALL = {
    "random_forest": {"trees": 30},
    "gradient_boosting": {"rounds": 60},
}


def data(n=80, p=3, seed=0):
    rng = np.random.default_rng(seed)
    X = pd.DataFrame(rng.normal(size=(n, p)), columns=[f"x{j}" for j in range(p)])
    y = np.sin(X["x0"].to_numpy()) + 0.5 * X["x1"].to_numpy() + 0.1 * rng.normal(size=n)
    return X, y


# -- elastic net -------------------------------------------------------------------

def test_en_alpha_zero_matches_ols():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(50, 2))
    y = 2 * X[:, 0] - X[:, 1] + 3
    m = fit_elastic_net(X, y, {"alpha": 0.0, "tol": 1e-12})
    coef, b = ols(X, y)
    np.testing.assert_allclose(m.coef_, coef, atol=1e-6)
    np.testing.assert_allclose(m.coef_, [2, -1], atol=1e-6)
    assert m.intercept_ == pytest.approx(b, abs=1e-6) and b == pytest.approx(3.0)


def test_en_full_shrinkage_and_constant_feature():
    X, y = data()
    m = fit_elastic_net(X, y, {"alpha": 1e6})
    assert np.all(m.coef_ == 0) and m.intercept_ == pytest.approx(y.mean())
    m = fit_elastic_net(np.ones((20, 1)), np.arange(20.0))
    assert m.coef_[0] == 0 and m.intercept_ == pytest.approx(9.5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.001, 1.0), st.floats(0.0, 1.0))
def test_en_kkt(seed, alpha, l1_ratio):
    X, y = data(seed=seed, p=4)
    m = fit_elastic_net(X, y, {"alpha": alpha, "l1_ratio": l1_ratio})
    assert m.kkt_violation(X, y) <= 10 * m.hyperparameters["tol"]


# -- trees -----------------------------------------------------------------------------

def test_rf_constant_target():
    X, _ = data()
    m = fit_random_forest(X, np.full(len(X), 7.5), SMALL["random_forest"])
    assert np.all(m.predict(X) == 7.5)


def test_rf_step_function_training_r2():
    rng = np.random.default_rng(2)
    X = pd.DataFrame({"a": rng.uniform(0, 1, 200), "b": rng.normal(size=200)})
    y = np.where(X["a"] < 0.3, 1.0, np.where(X["a"] < 0.7, 5.0, 2.0))
    pred = fit_random_forest(X, y, {"trees": 50, "min_leaf": 1, "mtry": 2}).predict(X)
    r2 = 1 - np.sum((y - pred) ** 2) / np.sum((y - y.mean()) ** 2)
    assert r2 >= 0.95


def test_gb_zero_rounds_is_mean():
    X, y = data()
    assert np.allclose(fit_gradient_boosting(X, y, {"rounds": 0}).predict(X), y.mean())


def test_gb_single_round_four_points():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([0.0, 0.0, 4.0, 4.0])
    m = fit_gradient_boosting(X, y, {"rounds": 1, "learning_rate": 1.0, "subsample": 1.0, "min_leaf": 1})
    # F0 = 2; the stump splits between 1 and 2 with leaf residuals -2 and +2
    np.testing.assert_allclose(m.predict(X), y)
    assert m.train_loss == [4.0, 0.0]


def test_gb_loss_non_increasing_full_sample():
    X, y = data(n=120)
    m = fit_gradient_boosting(X, y, {"rounds": 80, "subsample": 1.0})
    loss = np.array(m.train_loss)
    assert np.all(np.diff(loss) <= 1e-12)


# -- SVR -----------------------------------------------------------------------------

def test_svr_constant_target():
    X, _ = data(n=30)
    m = fit_svr_rbf(X, np.full(30, 4.0))
    assert np.allclose(m.predict(X), 4.0, atol=0.1)


def test_svr_smooth_function_training_mae():
    rng = np.random.default_rng(3)
    x = np.sort(rng.uniform(-2, 2, 100))
    y = np.sin(x)
    m = fit_svr_rbf(x[:, None], y, {"gamma": 1.0})
    # epsilon is in target standard deviations
    mae = np.mean(np.abs(m.predict(x[:, None]) - y))
    assert mae < 2 * 0.1 * y.std()


def test_svr_toy_dual_matches_reference_solver():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(6, 2))
    y = X[:, 0] ** 2 - X[:, 1]
    hp = {"C": 10.0, "epsilon": 0.1, "gamma": 0.5, "tol": 1e-6, "max_passes": 500}
    m = fit_svr_rbf(X, y, hp)
    ys = (y - y.mean()) / y.std()
    ref = SkSVR(C=10.0, epsilon=0.1, gamma=0.5, tol=1e-8).fit(X, ys)
    grid = rng.normal(size=(20, 2))
    np.testing.assert_allclose(m.decision_function(grid), ref.predict(grid), atol=1e-3)
    # dual feasibility: box constraint and zero sum
    assert np.all(np.abs(m.beta_) <= 10.0 + 1e-9)
    assert abs(m.beta_.sum()) < 1e-9


def test_svr_duplicate_rows_same_prediction():
    X, y = data(n=40)
    X = pd.concat([X, X.iloc[:5]], ignore_index=True)
    y = np.concatenate([y, y[:5]])
    p = fit_svr_rbf(X, y).predict(X)
    np.testing.assert_array_equal(p[:5], p[40:])


def test_svr_nonconvergence_warns():
    X, y = data(n=60)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        m = fit_svr_rbf(X, y, {"max_passes": 0, "tol": 1e-12})
    assert not m.converged_
    assert any(issubclass(w.category, NonConvergence) for w in caught)
    assert np.isfinite(m.predict(X)).all()


# -- contract ---------------------------------------------------------------------------

@pytest.mark.parametrize("name", sorted(LEARNERS))
def test_schema_by_name_and_shapes(name):
    X, y = data()
    m = LEARNERS[name](seed=3, **SMALL.get(name, {})).fit(X, y)
    assert predict(m, X.iloc[:0]).shape == (0,)
    assert predict(m, X.iloc[:1]).shape == (1,)
    np.testing.assert_array_equal(m.predict(X[X.columns[::-1]]), m.predict(X))
    with pytest.raises(SchemaMismatch):
        m.predict(X.rename(columns={"x0": "other"}))
    with pytest.raises(SchemaMismatch):
        m.predict(X.to_numpy()[:, :2])


@pytest.mark.parametrize("name", sorted(LEARNERS))
def test_non_finite_input(name):
    X, y = data()
    X.iloc[0, 0] = np.nan
    with pytest.raises(NonFiniteInput):
        LEARNERS[name]().fit(X, y)


@pytest.mark.parametrize("name", sorted(LEARNERS))
def test_seeded_determinism(name):
    X, y = data()
    a = LEARNERS[name](seed=5, **SMALL.get(name, {})).fit(X, y).predict(X)
    b = LEARNERS[name](seed=5, **SMALL.get(name, {})).fit(X, y).predict(X)
    assert np.array_equal(a, b)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000), st.floats(-1e3, 1e3))
def test_constant_shift(seed, c):
    X, y = data(n=50, seed=seed)
    fits = {
        "elastic_net": lambda t: fit_elastic_net(X, t, {"tol": 1e-12}),
        "random_forest": lambda t: fit_random_forest(X, t, {"trees": 10}, seed=seed),
        "gradient_boosting": lambda t: fit_gradient_boosting(X, t, {"rounds": 20}, seed=seed),
    }
    for name, fit in fits.items():
        np.testing.assert_allclose(fit(y + c).predict(X), fit(y).predict(X) + c, atol=1e-9, err_msg=name)
