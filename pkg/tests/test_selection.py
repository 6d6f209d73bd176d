import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import oracle_bins, oracle_mi, oracle_mrmr, oracle_n_bins, oracle_relevance
from unicrop.errors import EmptyPool, TooFewSamples
from unicrop.selection import (DIFFERENCE, RATIO, drop_near_zero_variance, mrmr_select, mutual_information,
                               n_bins, preserve_families, prune_collinear, quantile_bins, relevance_stats,
                               relevance_score, screen_and_select)


def test_mi_ln4_diagonal():
    x = np.repeat([1.0, 2.0, 3.0, 4.0], 25)
    assert n_bins(100) == 4
    assert mutual_information(x, x) == pytest.approx(math.log(4), abs=1e-12)


def test_mi_constant_is_zero():
    assert mutual_information(np.ones(50), np.arange(50.0)) == 0.0


def test_mi_too_few_samples():
    with pytest.raises(TooFewSamples):
        mutual_information([1, 2, 3, 4], [1, 2, 3, 4])
    with pytest.raises(TooFewSamples):
        mutual_information([1, 2, 3, 4, 5, np.nan], [1, 2, 3, np.nan, 5, 6])


def test_mi_independent_below_permutation_null():
    rng = np.random.default_rng(11)
    x, y = rng.normal(size=2000), rng.normal(size=2000)
    observed = mutual_information(x, y)
    null = [mutual_information(x, rng.permutation(y)) for _ in range(200)]
    assert observed < np.percentile(null, 95)


@pytest.mark.parametrize("n", [5, 19, 20, 125, 320, 450, 10000])
def test_bin_count_formula(n):
    assert n_bins(n) == oracle_n_bins(n)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(-5, 5), min_size=5, max_size=80))
def test_quantile_bins_match_rank_oracle(v):
    v = np.array(v, dtype=float)
    b = n_bins(len(v))
    assert np.array_equal(quantile_bins(v, b), oracle_bins(v, b))


pairs = st.integers(5, 120).flatmap(
    lambda n: st.tuples(st.lists(st.floats(-100, 100), min_size=n, max_size=n),
                        st.lists(st.floats(-100, 100), min_size=n, max_size=n)))


@settings(max_examples=60, deadline=None)
@given(pairs)
def test_mi_symmetric_nonnegative_and_matches_oracle(xy):
    x, y = xy
    a = mutual_information(x, y)
    assert a == mutual_information(y, x)
    assert a >= 0
    assert a == pytest.approx(oracle_mi(x, y), abs=1e-12)


grid_pairs = st.integers(5, 120).flatmap(
    lambda n: st.tuples(st.lists(st.integers(-10_000, 10_000), min_size=n, max_size=n),
                        st.lists(st.integers(-10_000, 10_000), min_size=n, max_size=n)))


@settings(max_examples=60, deadline=None)
@given(grid_pairs)
def test_mi_monotone_invariance(xy):
    # values on a 0.01 grid so the transforms stay strictly monotone in floating point
    x, y = np.array(xy[0]) / 100.0, np.array(xy[1]) / 100.0
    assert mutual_information(np.exp(x / 50.0), y) == pytest.approx(mutual_information(x, y), abs=1e-12)
    assert mutual_information(x, 3 * y + 7) == pytest.approx(mutual_information(x, y), abs=1e-12)


def test_relevance_score_examples():
    assert relevance_score({"a": (0.3, 0.2, 0.1)}) == {"a": 0.0}
    out = relevance_score({"a": (1.0, 0.9, 0.9), "b": (0.0, 0.1, 0.2)})
    assert out["a"] == 1.0 and out["b"] == 0.0
    # normalised components 1.0, 0.5, 0.0 for "m"
    out = relevance_score({"m": (1.0, 0.5, 0.0), "lo": (0.0, 0.0, 0.0), "hi": (0.5, 1.0, 1.0)})
    assert out["m"] == pytest.approx(0.5)


def test_relevance_matches_scipy_oracle():
    rng = np.random.default_rng(2)
    y = rng.normal(size=300)
    X = pd.DataFrame({"a": y + rng.normal(size=300), "b": np.sin(y) + 0.5 * rng.normal(size=300),
                      "c": rng.normal(size=300), "d": -2 * y})
    got = relevance_stats(X, y)
    ref = oracle_relevance(X, y)
    for c in X.columns:
        assert got[c].relevance == pytest.approx(ref[c], abs=1e-9)
    assert got["d"].pearson == pytest.approx(-1.0)


def test_variance_screen():
    X = pd.DataFrame({"const": [3.0] * 10, "binary": [0.0, 1.0] * 5,
                      "tiny": [5.0, 5.0 + 1e-12] * 5, "nan_const": [np.nan] + [2.0] * 9})
    kept, dropped = drop_near_zero_variance(X)
    assert kept == ["binary"]
    assert set(dropped) == {"const", "tiny", "nan_const"}


def test_prune_exact_copy_drops_lower_mi():
    rng = np.random.default_rng(0)
    y = rng.normal(size=200)
    f1 = y + 0.1 * rng.normal(size=200)
    X = pd.DataFrame({"f1": f1, "f2": f1.copy()})
    mi = {"f1": 0.9, "f2": 0.5}
    survivors, pruned = prune_collinear(X, y, mi)
    assert survivors == ["f1"] and pruned[0][:2] == ("f1", "f2")
    # equal MI -> the lexicographically larger name goes
    assert prune_collinear(X, y, {"f1": 0.5, "f2": 0.5})[0] == ["f1"]


def test_prune_below_threshold_kept():
    rng = np.random.default_rng(1)
    a = rng.normal(size=5000)
    # build b with corr(a, b) ~ 0.97
    b = 0.97 * a + math.sqrt(1 - 0.97 ** 2) * rng.normal(size=5000)
    X = pd.DataFrame({"a": a, "b": b})
    r = abs(X.corr().iloc[0, 1])
    assert 0.96 < r < 0.98
    assert prune_collinear(X, a)[0] == ["a", "b"]


def test_prune_cascade_three_copies():
    rng = np.random.default_rng(3)
    s = rng.normal(size=100)
    X = pd.DataFrame({"c": s, "a": s * 2, "b": s + 1, "z": rng.normal(size=100)})
    survivors, pruned = prune_collinear(X, s, {"a": 1.0, "b": 1.0, "c": 1.0, "z": 0.0})
    assert survivors == ["a", "z"]
    assert len(pruned) == 2


def test_family_rescue():
    families = {"vv": "SAR", "vh": "SAR", "t": "METEOROLOGY", "ndvi": "VEGETATION"}
    pruned = [("t", "vv", 0.99), ("t", "vh", 0.99)]
    pool, rescued, absent = preserve_families(["t", "ndvi"], pruned, families, {"vv": 0.2, "vh": 0.4})
    assert rescued == ["vh"] and pool == ["t", "ndvi", "vh"]
    assert set(absent) == {"SOIL", "TOPOGRAPHY"}
    pool, rescued, _ = preserve_families(["t", "ndvi", "vv"], [], families, {})
    assert pool == ["t", "ndvi", "vv"] and rescued == []


def _copy_pool(n=200, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.normal(size=n)
    return pd.DataFrame({"f1": y.copy(), "f2": y.copy(), "f3": rng.normal(size=n)}), y


def test_mrmr_copy_pool_through_screening():
    X, y = _copy_pool()
    rep = screen_and_select(X, y, {c: "METEOROLOGY" for c in X}, k=2)
    assert rep.features == ["f1", "f3"]
    assert rep.pruned_collinear[0][:2] == ("f1", "f2")


def test_mrmr_copy_pool_raw_matches_oracle():
    # without collinear pruning the greedy criterion itself ranks the copy second
    X, y = _copy_pool()
    for mode in (RATIO, DIFFERENCE):
        got = [s.feature for s in mrmr_select(X, y, k=2, mode=mode)]
        assert got == [f for f, _, _ in oracle_mrmr(X, y, 2, mode)]


def test_mrmr_edge_cases():
    X, y = _copy_pool()
    assert mrmr_select(X, y, k=0) == []
    full = mrmr_select(X, y, k=10)
    assert sorted(s.feature for s in full) == ["f1", "f2", "f3"]
    rel = relevance_stats(X, y)
    assert full[0].feature == max(sorted(X.columns), key=lambda c: rel[c].relevance)
    with pytest.raises(EmptyPool):
        mrmr_select(X[[]], y, k=2)
    with pytest.raises(ValueError):
        mrmr_select(X, y, k=2, mode="PRODUCT")


pools = st.tuples(st.integers(2, 6), st.integers(1, 3), st.integers(0, 10_000), st.sampled_from([RATIO, DIFFERENCE]))


@settings(max_examples=40, deadline=None)
@given(pools)
def test_mrmr_trace_equals_oracle(params):
    p, k, seed, mode = params
    rng = np.random.default_rng(seed)
    n = 80
    y = rng.normal(size=n)
    cols = {}
    for i in range(p):
        kind = rng.integers(3)
        base = y if kind == 0 else (cols[f"x{i - 1}"] if i and kind == 1 else rng.normal(size=n))
        cols[f"x{i}"] = np.round(base + rng.uniform(0.1, 2) * rng.normal(size=n), 2)
    X = pd.DataFrame(cols)
    got = mrmr_select(X, y, k=k, mode=mode)
    want = oracle_mrmr(X, y, k, mode)
    assert [s.feature for s in got] == [f for f, _, _ in want]
    for s, (_, rel, red) in zip(got, want):
        assert s.relevance == pytest.approx(rel, abs=1e-9)
        assert s.redundancy == pytest.approx(red, abs=1e-9)


def test_mrmr_deterministic_and_column_order_free():
    rng = np.random.default_rng(5)
    X = pd.DataFrame(rng.normal(size=(150, 8)), columns=[f"c{i}" for i in range(8)])
    y = X["c0"] + X["c3"] + rng.normal(size=150)
    a = mrmr_select(X, y, k=5)
    b = mrmr_select(X[X.columns[::-1]], y, k=5)
    assert a == b == mrmr_select(X, y, k=5)


def test_screen_and_select_report_invariants():
    rng = np.random.default_rng(9)
    n = 300
    y = rng.normal(size=n)
    X = pd.DataFrame({"t": y + rng.normal(size=n), "t_copy": None, "ndvi": rng.normal(size=n),
                      "vv": rng.normal(size=n), "flat": 1.0})
    X["t_copy"] = X["t"] * 1.0001
    families = {"t": "METEOROLOGY", "t_copy": "METEOROLOGY", "ndvi": "VEGETATION", "vv": "SAR",
                "flat": "SOIL"}
    rep = screen_and_select(X, y, families, k=15)
    assert rep.dropped_zero_variance == ["flat"]
    assert len(rep.features) == len(set(rep.features)) == 3
    assert rep.features[0] == "t"
    assert set(rep.family_absent) == {"SOIL", "TOPOGRAPHY"}
