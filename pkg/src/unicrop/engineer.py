"""Agronomic features computed per field window, and the field-level design matrix."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import EmptyWindow
from .harmonize import DIAGNOSTIC, ENGINEERED, PRECISION, ColumnMeta, MasterTable

log = logging.getLogger(__name__)

GDD_BASE = 10.0
CHILL_THRESHOLD = 15.0

# role -> master-table column used as input
DEFAULT_INPUTS = {
    "tmax": "T2M_MAX",
    "tmin": "T2M_MIN",
    "temperature": "T2M",
    "ndvi": "NDVI",
    "evi": "EVI",
    "vv": "VV",
    "vh": "VH",
    "clay": "clay",
    "radiation": "ALLSKY_SFC_SW_DWN",
    "elevation": "elevation",
}


def _clean(values) -> np.ndarray:
    return np.array([np.nan if v is None else float(v) for v in values], dtype=float)


def compute_gdd(tmax, tmin) -> tuple[float, float]:
    """Growing degree days above 10 °C. Returns (gdd, coverage ratio)."""
    hi, lo = _clean(tmax), _clean(tmin)
    if hi.shape != lo.shape:
        raise ValueError("tmax and tmin must be date-aligned")
    if hi.size == 0:
        raise EmptyWindow("no days in window")
    ok = ~(np.isnan(hi) | np.isnan(lo))
    daily = np.maximum(0.0, (hi[ok] + lo[ok]) / 2.0 - GDD_BASE)
    return math.fsum(daily), ok.sum() / hi.size


def count_chill_nights(tmin) -> int:
    lo = _clean(tmin)
    lo = lo[~np.isnan(lo)]
    return int((lo < CHILL_THRESHOLD).sum())


def seasonal_amplitude(index) -> float:
    v = _clean(index)
    v = v[~np.isnan(v)]
    if v.size < 2:
        return math.nan
    return float(v.max() - v.min())


def sar_texture(backscatter) -> float:
    v = _clean(backscatter)
    v = v[~np.isnan(v)]
    if v.size < 2:
        return math.nan
    return float(np.std(v, ddof=1))


def interaction_terms(clay, radiation, elevation, temperature) -> tuple[float, float]:
    def prod(a, b):
        if a is None or b is None or math.isnan(a) or math.isnan(b):
            return math.nan
        return float(a) * float(b)

    return prod(clay, radiation), prod(elevation, temperature)


def _mean(values: np.ndarray) -> float:
    v = values[~np.isnan(values)]
    return float(v.mean()) if v.size else math.nan


@dataclass(frozen=True)
class EngineeredFeature:
    name: str
    family: str
    inputs: tuple


ENGINEERED_FEATURES = (
    EngineeredFeature("gdd_base10", "METEOROLOGY", ("tmax", "tmin")),
    EngineeredFeature("chill_nights", "METEOROLOGY", ("tmin",)),
    EngineeredFeature("ndvi_amplitude", "VEGETATION", ("ndvi",)),
    EngineeredFeature("evi_amplitude", "VEGETATION", ("evi",)),
    EngineeredFeature("sar_texture_vv", "SAR", ("vv",)),
    EngineeredFeature("sar_texture_vh", "SAR", ("vh",)),
    EngineeredFeature("clay_x_radiation", "SOIL", ("clay", "radiation")),
    EngineeredFeature("elevation_x_temperature", "TOPOGRAPHY", ("elevation", "temperature")),
)


def _field_values(feat: str, cols: dict) -> tuple[float, float]:
    """Value and coverage of one engineered feature for one field's rows."""
    if feat == "gdd_base10":
        hi, lo = cols["tmax"], cols["tmin"]
        gdd, cov = compute_gdd(hi, lo)
        return (gdd if cov > 0 else math.nan), cov
    n = len(next(iter(cols.values())))
    if feat == "chill_nights":
        lo = cols["tmin"]
        cov = (~np.isnan(lo)).sum() / n
        return (float(count_chill_nights(lo)) if cov > 0 else math.nan), cov
    if feat.endswith("_amplitude"):
        s = cols["ndvi" if feat.startswith("ndvi") else "evi"]
        return seasonal_amplitude(s), (~np.isnan(s)).sum() / n
    if feat.startswith("sar_texture"):
        s = cols[feat[-2:]]
        return sar_texture(s), (~np.isnan(s)).sum() / n
    static, dynamic = (("clay", "radiation") if feat == "clay_x_radiation"
                       else ("elevation", "temperature"))
    s_val, d_val = _mean(cols[static]), _mean(cols[dynamic])
    if feat == "clay_x_radiation":
        value = interaction_terms(s_val, d_val, None, None)[0]
    else:
        value = interaction_terms(None, None, s_val, d_val)[1]
    cov = (~np.isnan(cols[dynamic])).sum() / n if not math.isnan(s_val) else 0.0
    return value, cov


def add_engineered_features(table: MasterTable, inputs=None) -> MasterTable:
    """Append engineered columns (and ``<name>_coverage`` diagnostics).

    Each field's value is broadcast to all of its rows. Features whose
    input columns are absent are skipped with a log line.
    """
    roles = dict(DEFAULT_INPUTS, **(inputs or {}))
    df = table.frame.copy()
    columns = dict(table.columns)
    groups = df.groupby("field_id", sort=False).indices
    for feat in ENGINEERED_FEATURES:
        needed = {r: roles[r] for r in feat.inputs}
        absent = [c for c in needed.values() if c not in df.columns]
        if absent:
            log.info("skipping %s: input column(s) %s absent", feat.name, absent)
            continue
        if feat.name in columns:
            log.warning("column %s already present; not recomputed", feat.name)
            continue
        values = np.full(len(df), np.nan)
        coverage = np.full(len(df), np.nan)
        for idx in groups.values():
            cols = {r: df[c].to_numpy(dtype=float)[idx] for r, c in needed.items()}
            v, cov = _field_values(feat.name, cols)
            values[idx] = v
            coverage[idx] = cov
        df[feat.name] = np.round(values, PRECISION)
        df[feat.name + "_coverage"] = np.round(coverage, PRECISION)
        columns[feat.name] = ColumnMeta(family=feat.family, derivation=ENGINEERED)
        columns[feat.name + "_coverage"] = ColumnMeta(family=feat.family, derivation=DIAGNOSTIC)
    return MasterTable(df, columns, list(table.audit))


@dataclass
class Dataset:
    """Field-level modelling table: one row per field with a yield."""

    X: pd.DataFrame
    y: np.ndarray
    field_ids: list
    families: dict
    groups: pd.DataFrame  # district, season

    @property
    def n(self) -> int:
        return len(self.y)


def build_dataset(table: MasterTable) -> Dataset:
    """Aggregate each candidate column to its mean over the field window.

    Diagnostic coverage columns are not candidates.
    """
    df = table.frame
    cand = [c for c in table.value_columns if table.columns[c].derivation != DIAGNOSTIC]
    grouped = df.groupby("field_id", sort=False)
    X = grouped[cand].mean()
    ctx = grouped[["district", "season", "yield_kg_ha"]].first()
    keep = ctx["yield_kg_ha"].notna().to_numpy()
    X = X.loc[keep]
    ctx = ctx.loc[keep]
    return Dataset(
        X=X.reset_index(drop=True),
        y=ctx["yield_kg_ha"].to_numpy(dtype=float),
        field_ids=list(ctx.index),
        families={c: table.columns[c].family for c in cand},
        groups=ctx[["district", "season"]].reset_index(drop=True),
    )
