"""Filter-style feature screening and greedy mRMR selection.

Everything here sees training rows only. Statistics use pairwise-complete
observations.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import EmptyPool, TooFewSamples
from .schema import FAMILIES

log = logging.getLogger(__name__)

DIFFERENCE = "DIFFERENCE"
RATIO = "RATIO"
DEFAULT_K = 15
DEFAULT_EPSILON = 1e-9
COLLINEAR_R = 0.98
MIN_MI_SAMPLES = 5


def n_bins(n: int) -> int:
    # floor(sqrt(n / 5)) == isqrt(n // 5) for integer n
    return max(2, min(8, math.isqrt(n // 5)))


def quantile_bins(v: np.ndarray, bins: int) -> np.ndarray:
    """Equal-frequency bin index per value; tied values share a bin.

    The bin is floor(B * r / n) with r the number of strictly smaller
    values, so it depends on ranks only.
    """
    n = v.size
    below = np.searchsorted(np.sort(v), v, side="left")
    return (below * bins) // n


def _complete(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = ~(np.isnan(x) | np.isnan(y))
    return x[ok], y[ok]


def _mi_from_bins(bx: np.ndarray, by: np.ndarray, bins: int) -> float:
    n = bx.size
    joint = np.bincount(bx * bins + by, minlength=bins * bins).reshape(bins, bins)
    px = joint.sum(axis=1)
    py = joint.sum(axis=0)
    i, j = np.nonzero(joint)
    c = joint[i, j].astype(float)
    terms = (c / n) * np.log(c * n / (px[i].astype(float) * py[j].astype(float)))
    # fsum makes the result independent of summation order, so MI(x,y) == MI(y,x)
    return max(0.0, math.fsum(terms.tolist()))


def mutual_information(x, y) -> float:
    """Plug-in mutual information (nats) over quantile-binned variables."""
    x, y = _complete(x, y)
    n = x.size
    if n < MIN_MI_SAMPLES:
        raise TooFewSamples(f"mutual information needs at least {MIN_MI_SAMPLES} paired samples, got {n}")
    b = n_bins(n)
    return _mi_from_bins(quantile_bins(x, b), quantile_bins(y, b), b)


def _pearson(x, y) -> float:
    x, y = _complete(x, y)
    if x.size < 2:
        return 0.0
    xc, yc = x - x.mean(), y - y.mean()
    den = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if den == 0.0:
        return 0.0
    return float(np.clip((xc @ yc) / den, -1.0, 1.0))


def _spearman(x, y) -> float:
    x, y = _complete(x, y)
    if x.size < 2:
        return 0.0
    return _pearson(pd.Series(x).rank().to_numpy(), pd.Series(y).rank().to_numpy())


@dataclass(frozen=True)
class RelevanceStats:
    mi: float
    pearson: float
    spearman: float
    relevance: float = 0.0


def relevance_stats(X: pd.DataFrame, y) -> dict[str, RelevanceStats]:
    raw = {c: (mutual_information(X[c], y), _pearson(X[c], y), _spearman(X[c], y)) for c in X.columns}
    scores = relevance_score(raw)
    return {c: RelevanceStats(*raw[c], relevance=scores[c]) for c in X.columns}


def _minmax(values: dict) -> dict:
    lo, hi = min(values.values()), max(values.values())
    if hi - lo <= 0:
        return {k: 0.0 for k in values}
    return {k: (v - lo) / (hi - lo) for k, v in values.items()}


def relevance_score(stats: dict) -> dict:
    """Combine (mi, pearson, spearman) triples into a [0, 1] relevance.

    Each of mi, |pearson|, |spearman| is min-max normalised across the
    candidates and the three are averaged.
    """
    if not stats:
        return {}
    parts = [
        _minmax({k: v[0] for k, v in stats.items()}),
        _minmax({k: abs(v[1]) for k, v in stats.items()}),
        _minmax({k: abs(v[2]) for k, v in stats.items()}),
    ]
    return {k: (parts[0][k] + parts[1][k] + parts[2][k]) / 3.0 for k in stats}


def drop_near_zero_variance(X: pd.DataFrame) -> tuple[list[str], list[str]]:
    kept, dropped = [], []
    for c in X.columns:
        v = X[c].to_numpy(dtype=float)
        v = v[~np.isnan(v)]
        if np.unique(v).size <= 1 or v.std(ddof=1) < 1e-8 * (abs(v.mean()) + 1.0):
            dropped.append(c)
        else:
            kept.append(c)
    return kept, dropped


def prune_collinear(X: pd.DataFrame, y, mi_y: dict | None = None, threshold: float = COLLINEAR_R):
    """Drop the less target-informative member of each |r| >= threshold pair.

    Returns (survivors, [(kept, dropped, r), ...]).
    """
    cols = list(X.columns)
    if mi_y is None:
        mi_y = {c: mutual_information(X[c], y) for c in cols}
    corr = X.corr(method="pearson", min_periods=2).to_numpy()
    pairs = []
    for i in range(len(cols)):
        for j in range(i + 1, len(cols)):
            r = corr[i, j]
            if not np.isnan(r) and abs(r) >= threshold:
                a, b = sorted((cols[i], cols[j]))
                pairs.append((-abs(r), a, b, float(r)))
    pairs.sort()
    alive = set(cols)
    pruned = []
    for _, a, b, r in pairs:
        if a not in alive or b not in alive:
            continue
        if mi_y[a] > mi_y[b]:
            keep, drop = a, b
        elif mi_y[b] > mi_y[a]:
            keep, drop = b, a
        else:
            keep, drop = a, b  # a < b lexicographically
        alive.discard(drop)
        pruned.append((keep, drop, r))
    return [c for c in cols if c in alive], pruned


def preserve_families(candidates, pruned, families: dict, mi_y: dict):
    """Re-add the best pruned feature of any family left without candidates.

    Returns (pool, rescued, absent_families).
    """
    pool = list(candidates)
    present = {families.get(c) for c in pool}
    dropped = [d for _, d, _ in pruned]
    rescued, absent = [], []
    for fam in FAMILIES:
        if fam in present:
            continue
        options = [d for d in dropped if families.get(d) == fam]
        if not options:
            absent.append(fam)
            log.info("family %s has no candidate features", fam)
            continue
        best = max(sorted(options), key=lambda d: mi_y[d])
        pool.append(best)
        rescued.append(best)
    return pool, rescued, absent


def pairwise_mi(X: pd.DataFrame) -> pd.DataFrame:
    cols = list(X.columns)
    p = len(cols)
    arr = X.to_numpy(dtype=float)
    full = ~np.isnan(arr).any(axis=0)
    n = arr.shape[0]
    b = n_bins(n)
    pre = {i: quantile_bins(arr[:, i], b) for i in range(p) if full[i]} if n >= MIN_MI_SAMPLES else {}
    out = np.zeros((p, p))
    for i in range(p):
        for j in range(i + 1, p):
            if i in pre and j in pre:
                m = _mi_from_bins(pre[i], pre[j], b)
            else:
                m = mutual_information(arr[:, i], arr[:, j])
            out[i, j] = out[j, i] = m
    return pd.DataFrame(out, index=cols, columns=cols)


@dataclass(frozen=True)
class SelectionStep:
    feature: str
    relevance: float
    redundancy: float
    criterion: float


def mrmr_select(X: pd.DataFrame, y, k: int = DEFAULT_K, mode: str = RATIO,
                epsilon: float = DEFAULT_EPSILON, stats: dict | None = None) -> list[SelectionStep]:
    """Greedy mRMR over the columns of ``X``.

    Relevance is the combined score; redundancy is the mean MI against the
    selected set, divided by the largest pairwise MI in the pool.
    """
    mode = mode.upper()
    if mode not in (DIFFERENCE, RATIO):
        raise ValueError(f"unknown criterion mode {mode!r}")
    if k <= 0:
        return []
    pool = sorted(X.columns)
    if not pool:
        raise EmptyPool("mRMR pool is empty")
    if stats is None or set(stats) != set(pool):
        stats = relevance_stats(X[pool], y)
    rel = {f: stats[f].relevance for f in pool}
    mi = pairwise_mi(X[pool])
    top = float(mi.to_numpy().max()) if len(pool) > 1 else 0.0
    norm = mi / top if top > 0 else mi * 0.0

    first = pool[0]
    for f in pool[1:]:
        if rel[f] > rel[first]:
            first = f
    steps = [SelectionStep(first, rel[first], 0.0, rel[first])]
    chosen = [first]
    red_sum = {f: 0.0 for f in pool}
    while len(chosen) < min(k, len(pool)):
        last = chosen[-1]
        best = None
        for f in pool:
            if f in chosen:
                continue
            red_sum[f] += float(norm.at[f, last])
            red = red_sum[f] / len(chosen)
            crit = rel[f] - red if mode == DIFFERENCE else rel[f] / (red + epsilon)
            if best is None or crit > best.criterion:
                best = SelectionStep(f, rel[f], red, crit)
        chosen.append(best.feature)
        steps.append(best)
    return steps


@dataclass
class SelectionReport:
    dropped_zero_variance: list = field(default_factory=list)
    pruned_collinear: list = field(default_factory=list)  # (kept, dropped, r)
    family_rescued: list = field(default_factory=list)
    family_absent: list = field(default_factory=list)
    selected: list = field(default_factory=list)  # SelectionStep
    criterion_mode: str = RATIO
    epsilon: float = DEFAULT_EPSILON

    @property
    def features(self) -> list[str]:
        return [s.feature for s in self.selected]


def screen_and_select(X: pd.DataFrame, y, families: dict, k: int = DEFAULT_K, mode: str = RATIO,
                      epsilon: float = DEFAULT_EPSILON) -> SelectionReport:
    """Variance screen, collinearity prune, family rescue, then mRMR."""
    y = np.asarray(y, dtype=float)
    kept, zero_var = drop_near_zero_variance(X)
    usable = [c for c in kept if (~np.isnan(X[c].to_numpy(dtype=float)) & ~np.isnan(y)).sum() >= MIN_MI_SAMPLES]
    zero_var += [c for c in kept if c not in usable]
    mi_y = {c: mutual_information(X[c], y) for c in usable}
    survivors, pruned = prune_collinear(X[usable], y, mi_y)
    pool, rescued, absent = preserve_families(survivors, pruned, families, mi_y)
    report = SelectionReport(dropped_zero_variance=zero_var, pruned_collinear=pruned,
                             family_rescued=rescued, family_absent=absent,
                             criterion_mode=mode.upper(), epsilon=epsilon)
    if k > 0 and not pool:
        raise EmptyPool("no candidate features survived screening")
    report.selected = mrmr_select(X[pool], y, k=k, mode=mode, epsilon=epsilon) if pool else []
    return report
