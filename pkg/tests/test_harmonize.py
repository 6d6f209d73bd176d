import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unicrop.acquire import FetchResult
from unicrop.errors import ColumnNameCollision, SpecMissingForColumn, UnknownFieldId
from unicrop.harmonize import (ENGINEERED, ColumnMeta, MasterTable, dedup_rows, emit_manifest,
                               merge_sources, read_master_table, write_manifest, write_master_table)
from unicrop.schema import FeatureSpec, FetchTask, FieldRecord

DATES = ("2022-01-01", "2022-01-11", "2022-01-21")


def field(fid, lat=10.0, lon=105.0):
    return FieldRecord(fid, lat, lon, "2022-01-01", "2022-01-31", yield_kg_ha=5000.0)


def spec(key, family="METEOROLOGY", source="NASA POWER", platform="NASA_POWER"):
    return FeatureSpec(key, key, source, platform, family=family)


def result(fid, key, values, platform="NASA_POWER", column="", units=""):
    t = FetchTask(fid, key, "src", platform, key, "2022-01-01", "2022-01-31", 10.0, 105.0, "NONE")
    return FetchResult(t, tuple(values), units=units, column=column)


def test_pivot_cardinality():
    fields = [field("A", lat=1.0), field("B", lat=2.0)]
    specs = [spec("T2M"), spec("RH2M")]
    results = [result(f.field_id, s.key_variable, [(d, 1.0) for d in DATES]) for f in fields for s in specs]
    table = merge_sources(results, fields, specs)
    assert table.frame.shape[0] == 6
    assert table.value_columns == ["RH2M", "T2M"]


def test_topography_suffix_restored():
    s = spec("DEM_HEIGHT", family="TOPOGRAPHY", source="SRTM", platform="USGS/SRTMGL1")
    table = merge_sources([result("A", "DEM_HEIGHT", [(DATES[0], 3.0)], column="elev")], [field("A")], [s])
    assert table.value_columns == ["elevation"]
    manifest = emit_manifest(table, [s])
    assert manifest["name"].tolist() == ["elevation"]


def test_rounding_policy(tmp_path):
    table = merge_sources([result("A", "T2M", [(DATES[0], 12.3456789)])], [field("A")], [spec("T2M")])
    assert table.frame["T2M"].iloc[0] == 12.345679
    write_master_table(table, tmp_path / "m.csv")
    assert "12.345679" in (tmp_path / "m.csv").read_text()


def test_dates_normalised_and_missing_kept():
    table = merge_sources([result("A", "T2M", [("2022/01/01", None), ("20220111", 2.0)])],
                          [field("A")], [spec("T2M")])
    assert table.frame["date"].tolist() == ["2022-01-01", "2022-01-11"]
    assert np.isnan(table.frame["T2M"].iloc[0])


def test_field_without_observations_keeps_a_row():
    table = merge_sources([result("A", "T2M", [(DATES[0], 1.0)])], [field("A"), field("B", lat=3.0)],
                          [spec("T2M")])
    assert table.frame["field_id"].tolist() == ["A", "B"]


def test_unknown_field_id():
    with pytest.raises(UnknownFieldId):
        merge_sources([result("Z", "T2M", [(DATES[0], 1.0)])], [field("A")], [spec("T2M")])


def test_column_name_collision():
    specs = [spec("elev_a", "TOPOGRAPHY"), spec("elev_b", "TOPOGRAPHY")]
    results = [result("A", "elev_a", [(DATES[0], 1.0)], column="elev"),
               result("A", "elev_b", [(DATES[0], 2.0)], column="elevation")]
    with pytest.raises(ColumnNameCollision):
        merge_sources(results, [field("A")], specs)


def _table(rows, cols=("a", "b", "c", "d", "e")):
    recs = []
    for fid, lat, vals in rows:
        rec = {"field_id": fid, "lat": lat, "lon": 0.0, "date": "2022-01-01", "district": None,
               "season": None, "yield_kg_ha": 1.0}
        rec.update(dict(zip(cols, vals)))
        recs.append(rec)
    frame = pd.DataFrame(recs)
    return MasterTable(frame, {c: ColumnMeta("METEOROLOGY") for c in cols})


def test_dedup_keeps_most_complete():
    nan = np.nan
    t = _table([("A", 1.0, [1, 2, 3, nan, nan]), ("B", 1.0, [1, 2, 3, 4, 5])])
    out = dedup_rows(t)
    assert out.frame["field_id"].tolist() == ["B"]
    assert out.audit[0]["kept_field"] == "B" and out.audit[0]["dropped_rows"] == [0]


def test_dedup_identical_rows_keeps_first():
    t = _table([("A", 1.0, [1] * 5), ("B", 1.0, [1] * 5)])
    out = dedup_rows(t)
    assert out.frame["field_id"].tolist() == ["A"]


def test_dedup_identity_without_duplicates():
    t = _table([("A", 1.0, [1] * 5), ("B", 2.0, [1] * 5)])
    out = dedup_rows(t)
    pd.testing.assert_frame_equal(out.frame, t.frame)
    assert out.audit == []


cell = st.one_of(st.none(), st.floats(-5, 5, allow_nan=False))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.lists(cell, min_size=5, max_size=5)), min_size=1, max_size=12))
def test_dedup_idempotent_and_unique(rows):
    t = _table([(f"F{i}", float(lat), [np.nan if v is None else v for v in vals])
                for i, (lat, vals) in enumerate(rows)])
    once = dedup_rows(t)
    twice = dedup_rows(once)
    pd.testing.assert_frame_equal(once.frame, twice.frame)
    assert not once.frame.duplicated(["lat", "lon", "date"]).any()
    assert len(once.frame) == len({lat for lat, _ in rows})


@settings(max_examples=40, deadline=None)
@given(st.dictionaries(st.tuples(st.sampled_from("ABC"), st.sampled_from(["T2M", "RH2M"]), st.sampled_from(DATES)),
                       st.floats(-100, 100, allow_nan=False), min_size=1))
def test_merge_lossless_for_unique_keys(cells):
    fields = [field("A", lat=1.0), field("B", lat=2.0), field("C", lat=3.0)]
    specs = [spec("T2M"), spec("RH2M")]
    by_task = {}
    for (fid, key, d), v in cells.items():
        by_task.setdefault((fid, key), []).append((d, v))
    results = [result(fid, key, vals) for (fid, key), vals in by_task.items()]
    df = merge_sources(results, fields, specs).frame.set_index(["field_id", "date"])
    assert not df.index.duplicated().any()
    for (fid, key, d), v in cells.items():
        assert df.loc[(fid, d), key] == round(v, 6)
    observed = sum(df[c].notna().sum() for c in ("T2M", "RH2M") if c in df)
    assert observed == len(cells)


def test_manifest_counts_and_bijection():
    keys = [f"V{i}" for i in range(7)]
    rng = np.random.default_rng(0)
    fields = [field(f"F{i:03d}", lat=float(i)) for i in range(557)]
    missing = set(rng.choice(557, 40, replace=False).tolist())
    results = [result(f.field_id, k, [(DATES[0], None if (k == "V0" and i in missing) else 1.0)])
               for i, f in enumerate(fields) for k in keys]
    specs = [spec(k) for k in keys]
    table = merge_sources(results, fields, specs)
    manifest = emit_manifest(table, specs)
    assert len(manifest) == 7
    assert manifest.set_index("name").loc["V0", "non_missing"] == 517
    for rec in manifest.to_dict("records"):
        assert rec["non_missing"] == table.frame[rec["name"]].notna().sum()


def test_manifest_requires_spec_unless_engineered():
    table = merge_sources([result("A", "T2M", [(DATES[0], 1.0)])], [field("A")], [spec("T2M")])
    table.frame["gdd"] = 3.0
    table.columns["gdd"] = ColumnMeta("METEOROLOGY")
    with pytest.raises(SpecMissingForColumn):
        emit_manifest(table, [spec("T2M")])
    table.columns["gdd"] = ColumnMeta("METEOROLOGY", derivation=ENGINEERED)
    assert emit_manifest(table, [spec("T2M")])["name"].tolist() == ["T2M", "gdd"]


def test_master_table_roundtrip(tmp_path):
    fields = [field("A", lat=1.0), field("B", lat=2.0)]
    specs = [spec("T2M"), spec("RH2M")]
    results = [result("A", "T2M", [(DATES[0], 1.5), (DATES[1], None)], units="C"),
               result("B", "RH2M", [(DATES[0], 80.0)], units="%")]
    table = merge_sources(results, fields, specs)
    write_master_table(table, tmp_path / "m.csv")
    write_manifest(emit_manifest(table, specs), tmp_path / "man.csv")
    back = read_master_table(tmp_path / "m.csv", tmp_path / "man.csv")
    pd.testing.assert_frame_equal(back.frame, table.frame, check_dtype=False)
    assert back.columns["T2M"].units == "C"
