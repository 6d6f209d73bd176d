"""Synthetic benchmark: seed fields, feature mapping and fixture time series
with a known yield signal.

Yield is 6600 kg/ha plus a smooth additive function of five planted
field-level signals (one per family) plus Gaussian noise whose variance is
a third of the signal variance, so an oracle that knows the function
reaches R² of about 0.75. Every other variable is an independent
distractor.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from .acquire import sanitise

N_DATES = 12
STEP_DAYS = 10
BASE_YIELD = 6600.0
CELL_MISSING = 0.05
FILE_MISSING = 0.02

# column -> family; the model sees the field-level mean of each
PLANTED_SIGNALS = {
    "RH2M": "METEOROLOGY",
    "NDVI": "VEGETATION",
    "VH": "SAR",
    "soc": "SOIL",
    "slope": "TOPOGRAPHY",
}

NASA = ("NASA POWER", "NASA_POWER")
ERA5 = ("ERA5-Land", "ECMWF/ERA5_LAND")
S2 = ("Sentinel-2", "COPERNICUS/S2")
MODIS = ("MODIS MOD15A2H", "MODIS/061/MOD15A2H")
S1 = ("Sentinel-1", "COPERNICUS/S1_GRD")
SOIL = ("SoilGrids", "ISRIC/SoilGrids")
SRTM = ("SRTM", "USGS/SRTMGL1")

# key_variable, api_parameter, (source, platform), notes, static?
MAPPING = (
    ("T2M", "T2M", NASA, "", False),
    ("T2M_MAX", "T2M_MAX", NASA, "", False),
    ("T2M_MIN", "T2M_MIN", NASA, "", False),
    ("RH2M", "RH2M", NASA, "", False),
    ("PRECTOTCORR", "PRECTOTCORR", NASA, "", False),
    ("ALLSKY_SFC_SW_DWN", "ALLSKY_SFC_SW_DWN", NASA, "", False),
    ("IRRIGATION", "", ERA5, "Irrigation = max(0, PEV - TP)", False),
    ("NDVI", "NDVI", S2, "", False),
    ("EVI", "", S2, "EVI = 2.5(NIR-RED)/(NIR+6RED-7.5BLUE+1)", False),
    ("LAI", "Lai_500m", MODIS, "", False),
    ("VV", "VV", S1, "", False),
    ("VH", "VH", S1, "", False),
    ("clay", "clay_0-5cm_mean", SOIL, "", True),
    ("sand", "sand_0-5cm_mean", SOIL, "", True),
    ("soc", "soc_0-5cm_mean", SOIL, "", True),
    ("phh2o", "phh2o_0-5cm_mean", SOIL, "", True),
    ("elevation", "elevation", SRTM, "", True),
    ("slope", "slope", SRTM, "", True),
    ("aspect", "aspect", SRTM, "", True),
)

UNITS = {"T2M": "C", "T2M_MAX": "C", "T2M_MIN": "C", "RH2M": "%", "PRECTOTCORR": "mm/day",
         "ALLSKY_SFC_SW_DWN": "W/m2", "PEV": "mm", "TP": "mm", "VV": "dB", "VH": "dB",
         "clay": "fraction", "sand": "fraction", "soc": "g/kg", "phh2o": "pH", "elevation": "m",
         "slope": "deg", "aspect": "deg"}


@dataclass
class Benchmark:
    fields: list  # dicts for the fields CSV
    series: dict  # (platform, variable, field_id) -> list of (date, value | None), None = no file
    signals: dict  # column -> field-level values used in the yield function
    yield_kg_ha: np.ndarray
    oracle_r2: float


def _signal(z: dict) -> np.ndarray:
    return (1.0 * z["RH2M"] + 0.8 * z["NDVI"] + 0.8 * np.tanh(1.2 * z["VH"])
            + 0.6 * z["soc"] + 0.5 * np.sinh(0.8 * z["slope"]))


def _std(v: np.ndarray) -> np.ndarray:
    return (v - v.mean()) / v.std()


def generate(n_fields: int = 600, seed: int = 7) -> Benchmark:
    rng = np.random.default_rng(seed)
    ids = [f"F{i:04d}" for i in range(n_fields)]
    districts = rng.choice(["north", "south", "east", "west"], n_fields)
    seasons = rng.choice(["wet", "dry"], n_fields)
    lat = np.round(10.0 + rng.random(n_fields) * 2.0, 5)
    lon = np.round(105.0 + rng.random(n_fields) * 2.0, 5)
    t = np.arange(N_DATES)
    shape = np.sin(np.pi * t / (N_DATES - 1))  # one growing-season hump

    def dyn(level, amp, noise, pattern=None):
        pattern = shape if pattern is None else pattern
        amps = amp * rng.uniform(0.5, 1.5, n_fields)
        return level[:, None] + amps[:, None] * pattern[None, :] + noise * rng.normal(size=(n_fields, N_DATES))

    def lvl(mean, sd):
        return mean + sd * rng.normal(size=n_fields)

    full = {}
    tmean = lvl(27.0, 1.5)
    full["T2M"] = dyn(tmean, 1.5, 0.8)
    full["T2M_MAX"] = full["T2M"] + lvl(5.0, 0.5)[:, None] + 0.5 * rng.normal(size=(n_fields, N_DATES))
    full["T2M_MIN"] = full["T2M"] - lvl(5.0, 0.5)[:, None] - 0.5 * rng.normal(size=(n_fields, N_DATES))
    full["RH2M"] = dyn(lvl(78.0, 6.0), 4.0, 1.0)
    full["PRECTOTCORR"] = np.maximum(0.0, dyn(lvl(6.0, 2.0), 3.0, 2.0))
    full["ALLSKY_SFC_SW_DWN"] = dyn(lvl(210.0, 20.0), -25.0, 8.0)
    full["PEV"] = np.maximum(0.0, dyn(lvl(5.0, 1.0), 1.0, 0.6))
    full["TP"] = np.maximum(0.0, dyn(lvl(4.5, 1.5), 2.0, 1.0))
    full["NDVI"] = np.clip(dyn(lvl(0.45, 0.07), 0.25, 0.02), -0.2, 0.99)
    nir = np.clip(dyn(lvl(0.32, 0.04), 0.12, 0.01), 0.05, 0.9)
    red = np.clip(dyn(lvl(0.08, 0.015), -0.03, 0.004), 0.005, 0.5)
    blue = np.clip(dyn(lvl(0.05, 0.01), -0.01, 0.003), 0.005, 0.5)
    full["NIR"], full["RED"], full["BLUE"] = nir, red, blue
    full["LAI"] = np.maximum(0.0, dyn(lvl(2.5, 0.6), 2.0, 0.2))
    full["VV"] = dyn(lvl(-9.0, 1.2), 1.5, 0.6)
    full["VH"] = dyn(lvl(-16.0, 1.5), 2.0, 0.7)
    static = {
        "clay": np.clip(lvl(0.30, 0.06), 0.05, 0.7),
        "sand": np.clip(lvl(0.35, 0.08), 0.05, 0.8),
        "soc": np.clip(lvl(14.0, 3.0), 2.0, None),
        "phh2o": lvl(6.2, 0.5),
        "elevation": np.abs(lvl(12.0, 6.0)),
        "slope": np.abs(lvl(1.5, 0.8)),
        "aspect": rng.uniform(0.0, 360.0, n_fields),
    }

    means = {k: full[k].mean(axis=1) for k in ("RH2M", "NDVI", "VH")}
    means.update({k: static[k] for k in ("soc", "slope")})
    f = _signal({k: _std(v) for k, v in means.items()})
    f = f / f.std() * 520.0
    noise_sd = math.sqrt(f.var() / 3.0)
    y = BASE_YIELD + f + noise_sd * rng.normal(size=n_fields)
    oracle_r2 = 1.0 - float(np.mean((y - BASE_YIELD - f) ** 2)) / float(y.var())

    fields = []
    starts = {"wet": date(2022, 6, 1), "dry": date(2022, 12, 1)}
    for i, fid in enumerate(ids):
        start = starts[seasons[i]]
        fields.append({
            "field_id": fid, "lat": f"{lat[i]:.5f}", "lon": f"{lon[i]:.5f}",
            "window_start": start.isoformat(),
            "window_end": (start + timedelta(days=STEP_DAYS * (N_DATES - 1))).isoformat(),
            "yield_kg_ha": f"{y[i]:.1f}", "district": districts[i], "season": seasons[i],
        })

    platforms = {k: plat for k, _, (_, plat), _, _ in MAPPING}
    platforms.update({"NIR": S2[1], "RED": S2[1], "BLUE": S2[1], "PEV": ERA5[1], "TP": ERA5[1]})
    series = {}
    for var, plat in platforms.items():
        if var in ("EVI", "IRRIGATION"):
            continue
        for i, fid in enumerate(ids):
            if rng.random() < FILE_MISSING:
                series[(plat, var, fid)] = None
                continue
            d0 = date.fromisoformat(fields[i]["window_start"])
            if var in static:
                series[(plat, var, fid)] = [(d0.isoformat(), float(static[var][i]))]
                continue
            vals = full[var][i]
            gaps = rng.random(N_DATES) < CELL_MISSING
            series[(plat, var, fid)] = [
                ((d0 + timedelta(days=STEP_DAYS * j)).isoformat(), None if gaps[j] else float(vals[j]))
                for j in range(N_DATES)
            ]
    return Benchmark(fields, series, means, y, oracle_r2)


def _mapping_csv() -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["key_variable", "api_parameter", "source_dataset", "platform", "notes"])
    for key, param, (source, plat), notes, _ in MAPPING:
        w.writerow([key, param, source, plat, notes])
    return buf.getvalue()


def _fields_csv(fields: list) -> str:
    buf = io.StringIO()
    cols = ["field_id", "lat", "lon", "window_start", "window_end", "yield_kg_ha", "district", "season"]
    w = csv.DictWriter(buf, cols, lineterminator="\n")
    w.writeheader()
    for rec in fields:
        w.writerow(rec)
    # rows the cleaner must drop: bad latitude, bad date, duplicate id
    w.writerow({**fields[0], "field_id": "BAD_LAT", "lat": "91.0"})
    w.writerow({**fields[0], "field_id": "BAD_DATE", "window_start": "2022-13-45"})
    w.writerow({**fields[1], "yield_kg_ha": "1.0"})
    return buf.getvalue()


def write_benchmark(directory, n_fields: int = 600, seed: int = 7) -> Path:
    """Write mapping, fields, fixtures and a run config; returns the config path."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    bench = generate(n_fields, seed)
    (root / "feature_mapping.csv").write_text(_mapping_csv(), encoding="utf-8")
    (root / "fields.csv").write_text(_fields_csv(bench.fields), encoding="utf-8")
    fixtures = root / "fixtures"
    for (plat, var, fid), rows in bench.series.items():
        if rows is None:
            continue
        d = fixtures / sanitise(plat) / sanitise(var)
        d.mkdir(parents=True, exist_ok=True)
        header = "elev" if var == "elevation" else "value"  # fetcher-local name, restored on merge
        lines = [f"# units: {UNITS[var]}"] if var in UNITS else []
        lines.append(f"date,{header}")
        lines += [f"{dt},{'NaN' if v is None else repr(round(v, 6))}" for dt, v in rows]
        (d / f"{sanitise(fid)}.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    cfg = root / "unicrop.conf"
    cfg.write_text(
        "# synthetic benchmark run\n"
        "mapping_file = feature_mapping.csv\n"
        "fields_file = fields.csv\n"
        "fixture_root = fixtures\n"
        "cache_dir = cache\n"
        "output_dir = out\n"
        "offline = true\n"
        "select_k = 15\n"
        "cv_folds = 5\n"
        "cv_seed = 0\n"
        "learner_seed = 0\n",
        encoding="utf-8",
    )
    return cfg
