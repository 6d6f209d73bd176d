"""Flat ``key = value`` run configuration with CLI overrides."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError
from .selection import DIFFERENCE, RATIO

PATH_KEYS = ("mapping_file", "fields_file", "fixture_root", "cache_dir", "output_dir")
TRUE = {"1", "true", "yes", "on"}
FALSE = {"0", "false", "no", "off", ""}


@dataclass(frozen=True)
class RunConfig:
    mapping_file: Path
    fields_file: Path
    output_dir: Path
    fixture_root: Path | None = None
    cache_dir: Path | None = None
    base_url: str = ""
    auth_env: str = "UNICROP_TOKEN"
    http_platforms: tuple = ()  # empty: the HTTP fetcher is the catch-all
    select_k: int = 15
    criterion: str = RATIO
    cv_seed: int = 0
    cv_folds: int = 5
    learner_seed: int = 0
    knn_k: int = 5
    shapley_mode: str = "AUTO"
    shapley_budget: int = 200
    shapley_rows: int = 40
    parallelism: int = 8
    rps: float = 0.0
    offline: bool = False

    def validate(self) -> "RunConfig":
        for key in ("mapping_file", "fields_file"):
            path = getattr(self, key)
            if not path.is_file():
                raise ConfigError(f"{key} not found: {path}")
        if self.fixture_root is not None and not self.fixture_root.is_dir():
            raise ConfigError(f"fixture_root is not a directory: {self.fixture_root}")
        if self.fixture_root is None and (self.offline or not self.base_url):
            raise ConfigError("no fetcher available: set fixture_root, or base_url without --offline")
        if self.select_k < 0:
            raise ConfigError("select_k must be >= 0")
        if self.cv_folds < 2:
            raise ConfigError("cv_folds must be >= 2")
        if self.criterion not in (RATIO, DIFFERENCE):
            raise ConfigError(f"criterion must be ratio or difference, got {self.criterion!r}")
        if self.shapley_mode not in ("AUTO", "EXACT", "SAMPLED"):
            raise ConfigError(f"unknown shapley_mode {self.shapley_mode!r}")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        return self

    def auth_token(self) -> str | None:
        return os.environ.get(self.auth_env) or None

    def echo(self) -> list[str]:
        """``key = value`` lines for the run summary (no secrets)."""
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(v)
            out.append(f"{f.name} = {'' if v is None else v}")
        return out


def _coerce(name: str, raw: str, base: Path):
    kind = {f.name: f.type for f in fields(RunConfig)}[name]
    raw = raw.strip()
    try:
        if name in PATH_KEYS:
            if not raw:
                return None
            p = Path(raw).expanduser()
            return p if p.is_absolute() else (base / p)
        if name == "http_platforms":
            return tuple(s.strip() for s in raw.split(",") if s.strip())
        if name == "criterion":
            return raw.upper()
        if name == "shapley_mode":
            return raw.upper()
        if kind == "bool":
            low = raw.lower()
            if low not in TRUE | FALSE:
                raise ValueError(raw)
            return low in TRUE
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def parse_config_text(text: str, base: Path) -> dict:
    known = {f.name for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw, base)
    return values


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Read a config file; relative paths resolve against its directory."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values = parse_config_text(path.read_text(encoding="utf-8"), path.parent.resolve())
    for key in ("mapping_file", "fields_file", "output_dir"):
        if values.get(key) is None:
            raise ConfigError(f"config is missing required key {key!r}")
    cfg = RunConfig(**values)
    if overrides:
        cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    return cfg.validate()
