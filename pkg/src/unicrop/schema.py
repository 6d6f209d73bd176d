"""Feature-mapping and field-table parsing, plus fetch-plan expansion."""

from __future__ import annotations

import csv
import logging
import math
import re
from collections import Counter
from dataclasses import asdict, dataclass, field, fields as dc_fields
from datetime import datetime
from pathlib import Path

from .errors import (
    DuplicateKeyVariable,
    EmptyAfterCleaning,
    EmptyPlan,
    MissingHeader,
    UnknownFamily,
)

log = logging.getLogger(__name__)

FAMILIES = ("METEOROLOGY", "VEGETATION", "SAR", "SOIL", "TOPOGRAPHY")

# Ordered: the first matching token wins. Matching is on a normalised
# source string (upper case, non-alphanumerics removed).
FAMILY_TABLE = (
    ("SENTINEL2", "VEGETATION"),
    ("MOD13", "VEGETATION"),
    ("MOD15", "VEGETATION"),
    ("SENTINEL1", "SAR"),
    ("ERA5LAND", "METEOROLOGY"),
    ("NASAPOWER", "METEOROLOGY"),
    ("MOD16", "METEOROLOGY"),
    ("SOILGRIDS", "SOIL"),
    ("SRTM", "TOPOGRAPHY"),
)

MAPPING_COLUMNS = ("key_variable", "api_parameter", "source_dataset", "platform", "notes")

_HEADER_ALIASES = {
    "key_variable": "key_variable",
    "variable": "key_variable",
    "api_parameter": "api_parameter",
    "api_param": "api_parameter",
    "source_dataset": "source_dataset",
    "source": "source_dataset",
    "platform": "platform",
    "notes": "notes",
    "notes_derivation": "notes",
    "derivation": "notes",
    "family": "family",
}

_FIELD_ALIASES = {
    "field_id": "field_id",
    "id": "field_id",
    "lat": "lat",
    "latitude": "lat",
    "lon": "lon",
    "long": "lon",
    "longitude": "lon",
    "window_start": "window_start",
    "start": "window_start",
    "window_end": "window_end",
    "end": "window_end",
    "date": "date",
    "yield_kg_ha": "yield_kg_ha",
    "yield": "yield_kg_ha",
    "district": "district",
    "season": "season",
}

DATE_FORMATS = ("%Y-%m-%d", "%Y/%m/%d", "%Y.%m.%d", "%Y%m%d", "%d-%m-%Y", "%d/%m/%Y", "%d.%m.%Y")


def _norm_header(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", name.strip().lower()).strip("_")


def _norm_source(source: str) -> str:
    return re.sub(r"[^A-Z0-9]", "", source.upper())


def infer_family(source_dataset: str) -> str | None:
    key = _norm_source(source_dataset)
    for token, family in FAMILY_TABLE:
        if token in key:
            return family
    return None


def infer_derivation(notes: str) -> str:
    if not notes:
        return "NONE"
    text = notes.strip()
    if text.upper().startswith("CUSTOM:"):
        return "CUSTOM:" + text.split(":", 1)[1].strip()
    if "EVI =" in text:
        return "EVI"
    if "Irrigation = max" in text:
        return "IRRIGATION"
    return "NONE"


def normalise_date(value: str) -> str | None:
    """Return ``value`` as an ISO-8601 date string, or None if unparseable."""
    text = (value or "").strip()
    if not text:
        return None
    # drop a time component if present
    text = re.split(r"[T ]", text, maxsplit=1)[0]
    for fmt in DATE_FORMATS:
        try:
            return datetime.strptime(text, fmt).date().isoformat()
        except ValueError:
            continue
    return None


@dataclass(frozen=True)
class FeatureSpec:
    key_variable: str
    api_parameter: str
    source_dataset: str
    platform: str
    derivation: str = "NONE"
    family: str = "METEOROLOGY"
    notes: str = ""

    def __post_init__(self):
        if not self.key_variable:
            raise ValueError("key_variable must be non-empty")
        if self.derivation == "NONE" and not self.api_parameter:
            raise ValueError(f"{self.key_variable}: api_parameter required when derivation is NONE")
        if self.family not in FAMILIES:
            raise UnknownFamily(f"{self.key_variable}: unknown family {self.family!r}")


@dataclass(frozen=True)
class FieldRecord:
    field_id: str
    lat: float
    lon: float
    window_start: str
    window_end: str
    yield_kg_ha: float | None = None
    district: str | None = None
    season: str | None = None


@dataclass(frozen=True, order=True)
class FetchTask:
    field_id: str
    key_variable: str
    source_dataset: str
    platform: str
    api_parameter: str
    window_start: str
    window_end: str
    lat: float
    lon: float
    derivation: str = "NONE"


@dataclass
class CleaningReport:
    kept: int = 0
    dropped: Counter = field(default_factory=Counter)
    warnings: list[str] = field(default_factory=list)


def _read_rows(path: Path) -> tuple[list[str], list[dict[str, str]]]:
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return [], []
        rows = []
        for raw in reader:
            if not any(cell.strip() for cell in raw):
                continue
            rows.append({header[i]: (raw[i] if i < len(raw) else "") for i in range(len(header))})
    return header, rows


def parse_feature_mapping(path) -> list[FeatureSpec]:
    """Read a feature-mapping CSV into FeatureSpec rows.

    Headers are matched case-insensitively; the display labels
    ("Key Variable", "API Param", "Notes / Derivation") are accepted as
    aliases of the canonical column names.
    """
    header, rows = _read_rows(Path(path))
    colmap = {}
    for h in header:
        canon = _HEADER_ALIASES.get(_norm_header(h))
        if canon and canon not in colmap.values():
            colmap[h] = canon
    missing = [c for c in MAPPING_COLUMNS if c not in colmap.values()]
    if missing:
        raise MissingHeader(f"{path}: missing mapping column(s) {missing}")

    specs: list[FeatureSpec] = []
    seen = set()
    for row in rows:
        rec = {canon: row[h].strip() for h, canon in colmap.items()}
        key = rec["key_variable"]
        if key in seen:
            raise DuplicateKeyVariable(f"duplicate key_variable {key!r}")
        seen.add(key)
        family = rec.get("family", "").upper()
        if not family:
            family = infer_family(rec["source_dataset"]) or ""
            if not family:
                raise UnknownFamily(
                    f"{key}: cannot infer family from source {rec['source_dataset']!r}"
                )
        elif family not in FAMILIES:
            raise UnknownFamily(f"{key}: unknown family {family!r}")
        specs.append(
            FeatureSpec(
                key_variable=key,
                api_parameter=rec["api_parameter"],
                source_dataset=rec["source_dataset"],
                platform=rec["platform"],
                derivation=infer_derivation(rec["notes"]),
                family=family,
                notes=rec["notes"],
            )
        )
    return specs


def write_feature_mapping(specs, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*MAPPING_COLUMNS, "family"])
        for s in specs:
            notes = s.notes
            if not notes and s.derivation.startswith("CUSTOM:"):
                notes = s.derivation
            w.writerow([s.key_variable, s.api_parameter, s.source_dataset, s.platform, notes, s.family])


def _parse_float(text: str) -> float | None:
    try:
        v = float(text)
    except (TypeError, ValueError):
        return None
    return v if math.isfinite(v) else None


def parse_fields(path) -> tuple[list[FieldRecord], CleaningReport]:
    """Clean the seed field table.

    Invalid rows are dropped with a reason code; the first occurrence of a
    duplicated ``field_id`` wins.
    """
    header, rows = _read_rows(Path(path))
    colmap = {}
    for h in header:
        canon = _FIELD_ALIASES.get(_norm_header(h))
        if canon and canon not in colmap.values():
            colmap[h] = canon
    present = set(colmap.values())
    has_window = {"window_start", "window_end"} <= present
    if not {"field_id", "lat", "lon"} <= present or not (has_window or "date" in present):
        raise MissingHeader(f"{path}: fields table needs field_id, lat, lon and dates")

    report = CleaningReport()
    out: list[FieldRecord] = []
    seen: set[str] = set()
    for lineno, row in enumerate(rows, start=2):
        rec = {canon: row[h].strip() for h, canon in colmap.items()}
        fid = rec.get("field_id", "")
        if not fid:
            report.dropped["MISSING_ID"] += 1
            continue
        lat, lon = _parse_float(rec.get("lat")), _parse_float(rec.get("lon"))
        if lat is None or lon is None or not (-90 <= lat <= 90) or not (-180 <= lon <= 180):
            report.dropped["INVALID_COORDINATE"] += 1
            continue
        if has_window:
            start, end = normalise_date(rec["window_start"]), normalise_date(rec["window_end"])
        else:
            start = end = normalise_date(rec["date"])
        if start is None or end is None or start > end:
            report.dropped["INVALID_DATE"] += 1
            continue
        ytext = rec.get("yield_kg_ha", "")
        yld = None
        if ytext:
            yld = _parse_float(ytext)
            if yld is None or yld < 0:
                report.dropped["INVALID_YIELD"] += 1
                continue
        if fid in seen:
            report.dropped["DUPLICATE_ID"] += 1
            report.warnings.append(f"line {lineno}: duplicate field_id {fid!r}, keeping first")
            continue
        seen.add(fid)
        out.append(
            FieldRecord(
                field_id=fid,
                lat=lat,
                lon=lon,
                window_start=start,
                window_end=end,
                yield_kg_ha=yld,
                district=rec.get("district") or None,
                season=rec.get("season") or None,
            )
        )
    report.kept = len(out)
    for w in report.warnings:
        log.warning(w)
    if not out:
        raise EmptyAfterCleaning(f"{path}: no valid field rows ({dict(report.dropped)})")
    return out, report


FIELD_COLUMNS = [f.name for f in dc_fields(FieldRecord)]


def write_fields(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIELD_COLUMNS)
        for r in records:
            w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v)
                        for v in asdict(r).values()])


def build_fetch_plan(fields, specs) -> list[FetchTask]:
    if not fields or not specs:
        raise EmptyPlan("fetch plan needs at least one field and one feature spec")
    tasks = {
        (f.field_id, s.key_variable): FetchTask(
            field_id=f.field_id,
            key_variable=s.key_variable,
            source_dataset=s.source_dataset,
            platform=s.platform,
            api_parameter=s.api_parameter,
            window_start=f.window_start,
            window_end=f.window_end,
            lat=f.lat,
            lon=f.lon,
            derivation=s.derivation,
        )
        for f in fields
        for s in specs
    }
    return [tasks[k] for k in sorted(tasks)]


PLAN_COLUMNS = [f.name for f in dc_fields(FetchTask)]


def write_fetch_plan(plan, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLAN_COLUMNS)
        for t in sorted(plan, key=lambda t: (t.field_id, t.key_variable)):
            w.writerow([repr(v) if isinstance(v, float) else v for v in asdict(t).values()])


def read_fetch_plan(path) -> list[FetchTask]:
    with open(path, newline="", encoding="utf-8") as fh:
        out = []
        for row in csv.DictReader(fh):
            row["lat"] = float(row["lat"])
            row["lon"] = float(row["lon"])
            out.append(FetchTask(**row))
    return out


def read_fields(path) -> list[FieldRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        out = []
        for row in csv.DictReader(fh):
            out.append(
                FieldRecord(
                    field_id=row["field_id"],
                    lat=float(row["lat"]),
                    lon=float(row["lon"]),
                    window_start=row["window_start"],
                    window_end=row["window_end"],
                    yield_kg_ha=float(row["yield_kg_ha"]) if row["yield_kg_ha"] else None,
                    district=row["district"] or None,
                    season=row["season"] or None,
                )
            )
    return out

