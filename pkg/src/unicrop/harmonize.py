"""Master-table construction from fetch results, with a provenance manifest."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import ColumnNameCollision, SpecMissingForColumn, UnknownFieldId
from .schema import normalise_date

log = logging.getLogger(__name__)

KEY_COLUMNS = ["field_id", "lat", "lon", "date"]
CONTEXT_COLUMNS = ["district", "season", "yield_kg_ha"]
MANIFEST_COLUMNS = ["name", "family", "source_dataset", "platform", "units", "derivation", "non_missing"]

PRECISION = 6
# derivation tags for columns that are computed here rather than fetched
ENGINEERED = "ENGINEERED"
DIAGNOSTIC = "DIAGNOSTIC"

_TOPO_CANON = (
    ("elevation", re.compile(r"^(elev|elevation|dem|height|altitude)")),
    ("slope", re.compile(r"^slope")),
    ("aspect", re.compile(r"^aspect")),
)


@dataclass(frozen=True)
class ColumnMeta:
    family: str
    source_dataset: str = ""
    platform: str = ""
    units: str = ""
    derivation: str = "NONE"


@dataclass
class MasterTable:
    frame: pd.DataFrame
    columns: dict = field(default_factory=dict)  # value column -> ColumnMeta
    audit: list = field(default_factory=list)

    @property
    def value_columns(self) -> list[str]:
        return sorted(self.columns)

    def copy(self) -> "MasterTable":
        return MasterTable(self.frame.copy(), dict(self.columns), list(self.audit))


def canonical_topography_name(*candidates: str) -> str | None:
    for cand in candidates:
        low = re.sub(r"[^a-z]", "", (cand or "").lower())
        for canon, pat in _TOPO_CANON:
            if pat.match(low):
                return canon
    return None


def column_name_for(spec_key: str, family: str, local_column: str = "", renames=None) -> str:
    if renames and spec_key in renames:
        return renames[spec_key]
    if family == "TOPOGRAPHY":
        canon = canonical_topography_name(local_column, spec_key)
        if canon:
            return canon
    return spec_key


def merge_sources(results, fields, specs, renames=None) -> MasterTable:
    """Pivot long fetch results into a wide table keyed by (lat, lon, date).

    Values are rounded to ``PRECISION`` decimals. Fields with no dated
    observation at all keep one all-missing row at their window start.
    """
    field_by_id = {f.field_id: f for f in fields}
    spec_by_key = {s.key_variable: s for s in specs}
    name_for: dict[str, str] = {}
    columns: dict[str, ColumnMeta] = {}
    units: dict[str, str] = {}
    local: dict[str, str] = {}
    for r in results:
        if r.task.field_id not in field_by_id:
            raise UnknownFieldId(f"result references unknown field_id {r.task.field_id!r}")
        if r.column and r.task.key_variable not in local:
            local[r.task.key_variable] = r.column
        if r.units and r.task.key_variable not in units:
            units[r.task.key_variable] = r.units

    keys = sorted({r.task.key_variable for r in results})
    for key in keys:
        spec = spec_by_key.get(key)
        family = spec.family if spec else ""
        name = column_name_for(key, family, local.get(key, ""), renames)
        if name in columns:
            raise ColumnNameCollision(f"{key!r} and another variable both map to column {name!r}")
        name_for[key] = name
        columns[name] = ColumnMeta(
            family=family,
            source_dataset=spec.source_dataset if spec else "",
            platform=spec.platform if spec else "",
            units=units.get(key, ""),
            derivation=spec.derivation if spec else "NONE",
        )

    cells: dict[tuple[str, str], dict[str, float]] = {}
    for r in results:
        col = name_for[r.task.key_variable]
        for d, v in r.values:
            iso = normalise_date(d)
            row = cells.setdefault((r.task.field_id, iso), {})
            row[col] = np.nan if v is None else round(float(v), PRECISION)

    order = {f.field_id: i for i, f in enumerate(fields)}
    dated = {fid for fid, _ in cells}
    for f in fields:
        if f.field_id not in dated:
            cells[(f.field_id, f.window_start)] = {}

    records = []
    for (fid, d) in sorted(cells, key=lambda k: (order[k[0]], k[1])):
        f = field_by_id[fid]
        rec = {"field_id": fid, "lat": f.lat, "lon": f.lon, "date": d,
               "district": f.district, "season": f.season, "yield_kg_ha": f.yield_kg_ha}
        rec.update(cells[(fid, d)])
        records.append(rec)
    value_cols = sorted(columns)
    frame = pd.DataFrame.from_records(records, columns=KEY_COLUMNS + CONTEXT_COLUMNS + value_cols)
    frame[value_cols] = frame[value_cols].astype(float)
    frame["yield_kg_ha"] = frame["yield_kg_ha"].astype(float)
    return MasterTable(frame, columns)


def dedup_rows(table: MasterTable) -> MasterTable:
    """Collapse rows sharing (lat, lon, date), keeping the most complete one.

    Ties go to the earliest row; every collapse is appended to ``audit``.
    """
    df = table.frame
    key = ["lat", "lon", "date"]
    counts = df[table.value_columns].notna().sum(axis=1)
    work = df.assign(_n=counts.to_numpy(), _pos=np.arange(len(df)))
    dup_mask = work.duplicated(key, keep=False)
    if not dup_mask.any():
        return table
    audit = list(table.audit)
    keep_pos = []
    for k, grp in work[dup_mask].groupby(key, sort=True):
        best = grp.sort_values(["_n", "_pos"], ascending=[False, True]).iloc[0]
        keep_pos.append(int(best["_pos"]))
        dropped = [int(p) for p in grp["_pos"] if p != best["_pos"]]
        audit.append({"key": tuple(k), "kept_row": int(best["_pos"]), "kept_field": best["field_id"],
                      "dropped_rows": dropped, "non_missing": int(best["_n"])})
    keep = np.concatenate([work.loc[~dup_mask, "_pos"].to_numpy(), np.array(keep_pos, dtype=int)])
    out = df.iloc[np.sort(keep)].reset_index(drop=True)
    return MasterTable(out, dict(table.columns), audit)


def emit_manifest(table: MasterTable, specs) -> pd.DataFrame:
    spec_names = {}
    for s in specs:
        spec_names[column_name_for(s.key_variable, s.family)] = s
        spec_names.setdefault(s.key_variable, s)
    rows = []
    for name in table.value_columns:
        meta = table.columns[name]
        if name not in spec_names and meta.derivation not in (ENGINEERED, DIAGNOSTIC):
            raise SpecMissingForColumn(f"column {name!r} has no feature spec")
        rows.append({
            "name": name,
            "family": meta.family,
            "source_dataset": meta.source_dataset,
            "platform": meta.platform,
            "units": meta.units,
            "derivation": meta.derivation,
            "non_missing": int(table.frame[name].notna().sum()),
        })
    return pd.DataFrame(rows, columns=MANIFEST_COLUMNS)


def write_master_table(table: MasterTable, path) -> None:
    df = table.frame[KEY_COLUMNS + CONTEXT_COLUMNS + table.value_columns]
    df.to_csv(path, index=False, na_rep="", float_format=f"%.{PRECISION}f", lineterminator="\n")


def write_manifest(manifest: pd.DataFrame, path) -> None:
    manifest.to_csv(path, index=False, na_rep="", lineterminator="\n")


def read_master_table(path, manifest_path=None) -> MasterTable:
    df = pd.read_csv(path, dtype={"field_id": str, "date": str, "district": str, "season": str},
                     keep_default_na=False, na_values=[""])
    for c in ("district", "season"):
        df[c] = df[c].astype(object).where(df[c].notna(), None)
    value_cols = [c for c in df.columns if c not in KEY_COLUMNS + CONTEXT_COLUMNS]
    df[value_cols] = df[value_cols].astype(float)
    columns = {c: ColumnMeta(family="") for c in value_cols}
    if manifest_path is not None:
        man = pd.read_csv(manifest_path, dtype=str, keep_default_na=False)
        for rec in man.to_dict("records"):
            columns[rec["name"]] = ColumnMeta(rec["family"], rec["source_dataset"], rec["platform"],
                                              rec["units"], rec["derivation"])
    return MasterTable(df, columns)
