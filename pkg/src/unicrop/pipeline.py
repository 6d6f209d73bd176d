"""Staged end-to-end run with resumable, content-hashed artifacts.

Every stage reads its inputs from the previous stage's files, so a resumed
run and a fresh run see exactly the same bytes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .acquire import (FAILED, FetchCache, FetcherRegistry, fetch_batch, read_results,
                      register_http_fetcher, register_local_fixture_fetcher, write_results)
from .config import RunConfig
from .engineer import add_engineered_features, build_dataset
from .errors import AcquisitionError, ConfigError, ModellingError, UniCropError
from .evaluate.cv import ENSEMBLE, CvResult, CvSettings, run_cv
from .harmonize import (dedup_rows, emit_manifest, merge_sources, read_master_table,
                        write_manifest, write_master_table)
from .preprocess import write_preprocess
from .schema import (build_fetch_plan, parse_feature_mapping, parse_fields, read_fetch_plan,
                     read_fields, write_feature_mapping, write_fetch_plan, write_fields)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_ACQUISITION = 3
EXIT_MODELLING = 4
FAILED_TASK_LIMIT = 0.5

FETCH_PLAN = "fetch_plan.csv"
FIELDS_CLEAN = "fields_clean.csv"
MAPPING_CLEAN = "mapping_clean.csv"
CLEANING_REPORT = "cleaning_report.csv"
ACQUIRED = "acquired.csv"
HARMONIZED = "harmonized_table.csv"
HARMONIZED_MANIFEST = "harmonized_manifest.csv"
DEDUP_AUDIT = "dedup_audit.csv"
MASTER = "master_table.csv"
MANIFEST = "unicrop_columns_manifest.csv"
SELECTION_REPORT = "selection_report.csv"
SELECTED = "selected_features.txt"
METRICS = "metrics_report.csv"
WEIGHTS = "ensemble_weights.csv"
SHAP = "shap_importance.csv"
OOF = "oof_predictions.csv"
SUMMARY = "run_summary.txt"

STAGES = ("schema_config", "acquire", "harmonize", "engineer", "evaluate")


class AcquisitionThreshold(AcquisitionError):
    """Too many fetch tasks failed."""


class StageFailure(Exception):
    def __init__(self, stage: str, code: int, message: str):
        super().__init__(f"stage={stage}: {message}")
        self.stage = stage
        self.code = code


@dataclass
class RunOutcome:
    code: int
    message: str = ""
    stages: dict = field(default_factory=dict)  # stage -> "ran" | "skipped"
    timings: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    path.write_text(buf.getvalue(), encoding="utf-8")


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(b"\0")
            h.update(sha256_file(p).encode())
    return h.hexdigest()


# -- resume stamps --------------------------------------------------------------

def _stage_key(inputs: list[Path], settings: dict) -> str:
    h = hashlib.sha256()
    for p in inputs:
        h.update(p.name.encode())
        h.update(sha256_file(p).encode() if p.is_file() else b"<absent>")
    h.update(json.dumps(settings, sort_keys=True, default=str).encode())
    return h.hexdigest()


def _stamp_path(outdir: Path, stage: str) -> Path:
    return outdir / f".stage_{stage}.hash"


def _is_current(outdir: Path, stage: str, key: str, outputs: list[Path]) -> bool:
    stamp = _stamp_path(outdir, stage)
    if not stamp.is_file() or not all(p.is_file() for p in outputs):
        return False
    try:
        saved = json.loads(stamp.read_text(encoding="utf-8"))
    except ValueError:
        return False
    if saved.get("key") != key:
        return False
    return saved.get("outputs") == {p.name: sha256_file(p) for p in outputs}


def _write_stamp(outdir: Path, stage: str, key: str, outputs: list[Path]) -> None:
    body = {"key": key, "outputs": {p.name: sha256_file(p) for p in outputs}}
    _stamp_path(outdir, stage).write_text(json.dumps(body, sort_keys=True, indent=1) + "\n", encoding="utf-8")


# -- stages ----------------------------------------------------------------------

def stage_schema_config(cfg: RunConfig, out: Path) -> list[Path]:
    specs = parse_feature_mapping(cfg.mapping_file)
    fields, report = parse_fields(cfg.fields_file)
    plan = build_fetch_plan(fields, specs)
    write_feature_mapping(specs, out / MAPPING_CLEAN)
    write_fields(fields, out / FIELDS_CLEAN)
    write_fetch_plan(plan, out / FETCH_PLAN)
    rows = [("kept", report.kept)] + sorted(report.dropped.items())
    _write_csv(out / CLEANING_REPORT, ["reason", "count"], rows)
    log.info("fetch plan: %d fields x %d specs = %d tasks", len(fields), len(specs), len(plan))
    return [out / MAPPING_CLEAN, out / FIELDS_CLEAN, out / FETCH_PLAN, out / CLEANING_REPORT]


def build_registry(cfg: RunConfig) -> FetcherRegistry:
    registry = FetcherRegistry()
    if cfg.fixture_root is not None:
        registry.add(register_local_fixture_fetcher(cfg.fixture_root))
    if cfg.base_url and not cfg.offline:
        registry.add(register_http_fetcher(cfg.base_url, cfg.auth_token(),
                                           platforms=cfg.http_platforms or None, rps=cfg.rps or None))
    return registry


def failed_fraction(results) -> float:
    return sum(r.status == FAILED for r in results) / len(results) if results else 0.0


def stage_acquire(cfg: RunConfig, out: Path) -> list[Path]:
    plan = read_fetch_plan(out / FETCH_PLAN)
    cache = FetchCache(cfg.cache_dir) if cfg.cache_dir is not None else None
    results = fetch_batch(plan, build_registry(cfg), cache, max_workers=cfg.parallelism)
    write_results(results, out / ACQUIRED)
    return [out / ACQUIRED]


def check_acquisition(out: Path) -> float:
    plan = read_fetch_plan(out / FETCH_PLAN)
    frac = failed_fraction(read_results(out / ACQUIRED, plan))
    log.info("acquisition: %.1f%% of tasks FAILED", 100 * frac)
    if frac > FAILED_TASK_LIMIT:
        raise AcquisitionThreshold(f"{100 * frac:.1f}% of fetch tasks FAILED (limit {100 * FAILED_TASK_LIMIT:.0f}%)")
    return frac


def stage_harmonize(cfg: RunConfig, out: Path) -> list[Path]:
    plan = read_fetch_plan(out / FETCH_PLAN)
    fields = read_fields(out / FIELDS_CLEAN)
    specs = parse_feature_mapping(out / MAPPING_CLEAN)
    results = read_results(out / ACQUIRED, plan)
    table = dedup_rows(merge_sources(results, fields, specs))
    write_master_table(table, out / HARMONIZED)
    write_manifest(emit_manifest(table, specs), out / HARMONIZED_MANIFEST)
    rows = [(";".join(map(str, a["key"])), a["kept_row"], a["kept_field"],
             " ".join(map(str, a["dropped_rows"])), a["non_missing"]) for a in table.audit]
    _write_csv(out / DEDUP_AUDIT, ["key", "kept_row", "kept_field", "dropped_rows", "non_missing"], rows)
    return [out / HARMONIZED, out / HARMONIZED_MANIFEST, out / DEDUP_AUDIT]


def stage_engineer(cfg: RunConfig, out: Path) -> list[Path]:
    specs = parse_feature_mapping(out / MAPPING_CLEAN)
    table = add_engineered_features(read_master_table(out / HARMONIZED, out / HARMONIZED_MANIFEST))
    write_master_table(table, out / MASTER)
    write_manifest(emit_manifest(table, specs), out / MANIFEST)
    return [out / MASTER, out / MANIFEST]


def cv_settings(cfg: RunConfig) -> CvSettings:
    return CvSettings(select_k=cfg.select_k, criterion=cfg.criterion, folds=cfg.cv_folds,
                      cv_seed=cfg.cv_seed, learner_seed=cfg.learner_seed, knn_k=cfg.knn_k,
                      shapley_mode=cfg.shapley_mode, shapley_budget=cfg.shapley_budget,
                      shapley_rows=cfg.shapley_rows, shapley_seed=cfg.cv_seed)


def stage_evaluate(cfg: RunConfig, out: Path) -> tuple[list[Path], CvResult]:
    table = read_master_table(out / MASTER, out / MANIFEST)
    data = build_dataset(table)
    if data.n < cfg.cv_folds:
        raise ModellingError(f"{data.n} fields with a yield; need at least {cfg.cv_folds}")
    cv = run_cv(data, cv_settings(cfg))
    if not cv.ensemble_members:
        raise ModellingError("every learner failed")
    return write_reports(cv, out), cv


# -- reports -------------------------------------------------------------------------

def consensus_features(cv: CvResult) -> list[str]:
    """Features picked in a majority of folds, by pick count then mean rank."""
    picks: dict[str, list[int]] = {}
    for st in cv.fold_states:
        for rank, name in enumerate(st.features, start=1):
            picks.setdefault(name, []).append(rank)
    need = len(cv.fold_states) // 2 + 1
    chosen = [f for f, r in picks.items() if len(r) >= need]
    return sorted(chosen, key=lambda f: (-len(picks[f]), float(np.mean(picks[f])), f))


def selection_rows(cv: CvResult) -> list[tuple]:
    rows = []
    for st in cv.fold_states:
        rep = st.selection
        for f in rep.dropped_zero_variance:
            rows.append((st.fold, "drop_zero_variance", f, "", None, None, None, None, None))
        for kept, dropped, r in rep.pruned_collinear:
            rows.append((st.fold, "prune_collinear", dropped, kept, float(r), None, None, None, None))
        for f in rep.family_rescued:
            rows.append((st.fold, "family_rescue", f, "", None, None, None, None, None))
        for fam in rep.family_absent:
            rows.append((st.fold, "family_absent", "", fam, None, None, None, None, None))
        for rank, s in enumerate(rep.selected, start=1):
            rows.append((st.fold, "select", s.feature, rep.criterion_mode, None, rank, s.relevance,
                         s.redundancy, s.criterion))
    return rows


def write_reports(cv: CvResult, outdir, manifest: pd.DataFrame | None = None) -> list[Path]:
    """Write the evaluation artifacts; returns the paths written."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    errors = []

    def emit(name, fn):
        try:
            fn(out / name)
            written.append(out / name)
        except OSError as exc:
            errors.append(f"{name}: {exc}")

    if manifest is not None:
        emit(MANIFEST, lambda p: write_manifest(manifest, p))
    emit(SELECTION_REPORT, lambda p: _write_csv(
        p, ["fold", "action", "feature", "detail", "r", "rank", "relevance", "redundancy", "criterion"],
        selection_rows(cv)))
    emit(SELECTED, lambda p: p.write_text("".join(f + "\n" for f in consensus_features(cv)), encoding="utf-8"))
    for st in cv.fold_states:
        emit(f"fold{st.fold}_selected_features.txt",
             lambda p, st=st: p.write_text("".join(f + "\n" for f in st.features), encoding="utf-8"))
        emit(f"fold{st.fold}_preprocess.csv", lambda p, st=st: write_preprocess(st.preprocessor, p))
    models = [m for m in cv.oof.columns if m in cv.metrics] + ([ENSEMBLE] if ENSEMBLE in cv.metrics else [])
    emit(METRICS, lambda p: _write_csv(
        p, ["model", "rmse", "mae", "r2", "mape"],
        [(m, cv.metrics[m].rmse, cv.metrics[m].mae, cv.metrics[m].r2, cv.metrics[m].mape) for m in models]))
    if cv.weights is not None:
        emit(WEIGHTS, lambda p: _write_csv(
            p, ["model", "weight", "objective"],
            [(m, float(w), cv.weights.objective) for m, w in zip(cv.ensemble_members, cv.weights.weights)]))
    if cv.shap is not None:
        emit(SHAP, lambda p: _write_csv(p, ["feature", "mean_abs_phi", "rank"], cv.shap.itertuples(index=False)))

    def oof(p):
        cols = list(cv.oof.columns)
        ens = cv.ensemble_oof
        rows = []
        for i, fid in enumerate(cv.field_ids):
            rows.append([fid, cv.y[i], *cv.oof.iloc[i].tolist()] + ([ens[i]] if ens is not None else []))
        _write_csv(p, ["field_id", "y", *cols] + ([ENSEMBLE] if ens is not None else []), rows)

    emit(OOF, oof)
    if errors:
        raise OSError("; ".join(errors))
    return written


def write_summary(cfg: RunConfig, outcome: RunOutcome, cv: CvResult | None, out: Path) -> None:
    lines = [f"unicrop {__version__}", f"python {platform.python_version()}",
             f"numpy {np.__version__}", f"pandas {pd.__version__}", f"exit_code = {outcome.code}"]
    if outcome.message:
        lines.append(f"message = {outcome.message}")
    lines += ["", "[config]"] + cfg.echo()
    lines += ["", "[seeds]", f"cv_seed = {cfg.cv_seed}", f"learner_seed = {cfg.learner_seed}",
              f"shapley_seed = {cfg.cv_seed}"]
    lines += ["", "[stages]"] + [f"{s} = {outcome.stages.get(s, 'not run')} ({outcome.timings.get(s, 0.0):.2f}s)"
                                 for s in STAGES]
    if cv is not None:
        lines += ["", "[models]"]
        for name, reason in sorted(cv.excluded.items()):
            lines.append(f"excluded {name}: {reason}")
        lines.append(f"ensemble members = {','.join(cv.ensemble_members)}")
        if cv.shap_model:
            lines.append(f"shapley model = {cv.shap_model}")
        if cv.weights is not None:
            lines.append(f"ensemble kkt residual = {cv.weights.kkt_residual:.3e}")
    lines += ["", "[artifacts]"]
    for p in sorted(out.iterdir()):
        if p.is_file() and p.name != SUMMARY and not p.name.startswith("."):
            lines.append(f"{p.name} sha256={sha256_file(p)}")
    (out / SUMMARY).write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- driver ------------------------------------------------------------------------

def _fixture_settings(cfg: RunConfig) -> dict:
    return {
        "fixture_digest": _tree_digest(cfg.fixture_root) if cfg.fixture_root is not None else "",
        "base_url": "" if cfg.offline else cfg.base_url,
        "http_platforms": list(cfg.http_platforms),
    }


def _evaluate_settings(cfg: RunConfig) -> dict:
    keys = ("select_k", "criterion", "cv_seed", "cv_folds", "learner_seed", "knn_k",
            "shapley_mode", "shapley_budget", "shapley_rows")
    return {k: getattr(cfg, k) for k in keys}


def run_pipeline(cfg: RunConfig, resume: bool = True) -> RunOutcome:
    """Run all stages; returns the outcome with an exit code (never raises
    for stage failures)."""
    out = Path(cfg.output_dir)
    outcome = RunOutcome(EXIT_OK)
    cv = None
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        return RunOutcome(EXIT_CONFIG, f"stage=schema_config: cannot create output dir: {exc}")

    plan = [
        ("schema_config", [cfg.mapping_file, cfg.fields_file], lambda: {},
         [MAPPING_CLEAN, FIELDS_CLEAN, FETCH_PLAN, CLEANING_REPORT]),
        ("acquire", [out / FETCH_PLAN], lambda: _fixture_settings(cfg), [ACQUIRED]),
        ("harmonize", [out / FETCH_PLAN, out / FIELDS_CLEAN, out / MAPPING_CLEAN, out / ACQUIRED],
         lambda: {}, [HARMONIZED, HARMONIZED_MANIFEST, DEDUP_AUDIT]),
        ("engineer", [out / MAPPING_CLEAN, out / HARMONIZED, out / HARMONIZED_MANIFEST], lambda: {},
         [MASTER, MANIFEST]),
        ("evaluate", [out / MASTER, out / MANIFEST], lambda: _evaluate_settings(cfg), None),
    ]
    try:
        for stage, inputs, settings, outputs in plan:
            t0 = time.perf_counter()
            try:
                key = _stage_key(inputs, settings())
                if stage == "evaluate":
                    # fold artifacts depend on the fold count, so list them from the stamp
                    outputs = _stamped_outputs(out, stage)
                out_paths = [out / n for n in outputs] if outputs else []
                if resume and out_paths and _is_current(out, stage, key, out_paths):
                    outcome.stages[stage] = "skipped"
                    if stage == "acquire":
                        check_acquisition(out)
                    continue
                if stage == "schema_config":
                    written = stage_schema_config(cfg, out)
                elif stage == "acquire":
                    written = stage_acquire(cfg, out)
                    check_acquisition(out)
                elif stage == "harmonize":
                    written = stage_harmonize(cfg, out)
                elif stage == "engineer":
                    written = stage_engineer(cfg, out)
                else:
                    written, cv = stage_evaluate(cfg, out)
                _write_stamp(out, stage, key, written)
                outcome.stages[stage] = "ran"
            except StageFailure:
                raise
            except ConfigError as exc:
                raise StageFailure(stage, EXIT_CONFIG, str(exc)) from exc
            except AcquisitionThreshold as exc:
                raise StageFailure(stage, EXIT_ACQUISITION, str(exc)) from exc
            except ModellingError as exc:
                raise StageFailure(stage, EXIT_MODELLING, str(exc)) from exc
            except (UniCropError, OSError, ValueError, KeyError) as exc:
                code = {"schema_config": EXIT_CONFIG, "evaluate": EXIT_MODELLING}.get(stage, EXIT_FAILURE)
                raise StageFailure(stage, code, f"{type(exc).__name__}: {exc}") from exc
            finally:
                outcome.timings[stage] = time.perf_counter() - t0
    except StageFailure as exc:
        log.error("%s", exc)
        outcome.code = exc.code
        outcome.message = str(exc)
    write_summary(cfg, outcome, cv, out)
    outcome.artifacts = sorted(p.name for p in out.iterdir() if p.is_file() and not p.name.startswith("."))
    return outcome


def _stamped_outputs(out: Path, stage: str) -> list[str]:
    stamp = _stamp_path(out, stage)
    if not stamp.is_file():
        return []
    try:
        return sorted(json.loads(stamp.read_text(encoding="utf-8")).get("outputs", {}))
    except ValueError:
        return []
