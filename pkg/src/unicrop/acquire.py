"""Fetch-plan execution: pluggable fetchers, derivations and an on-disk cache."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import httpx

from .errors import (
    CacheCorruption,
    HttpStatusError,
    MisalignedDates,
    MissingInputSeries,
    NoFetcherForPlatform,
    ParsePayloadError,
)
from .schema import FetchTask, normalise_date

log = logging.getLogger(__name__)

OK = "OK"
FAILED = "FAILED"

# Derivation rule -> component inputs. Each input is fetched as its own
# sub-task on the parent's platform, with the input name as key and parameter.
DERIVATION_INPUTS = {
    "EVI": ("NIR", "RED", "BLUE"),
    "IRRIGATION": ("PEV", "TP"),
}

EVI_DENOMINATOR_FLOOR = 1e-9

Series = list  # list of (iso-date, float | None)


@dataclass(frozen=True)
class FetchResult:
    task: FetchTask
    values: tuple  # ((date, float | None), ...)
    units: str = ""
    source_tag: str = ""
    status: str = OK
    column: str = ""  # fetcher-local column name, if the source reported one
    retrieved_at: str = field(default="", compare=False)

    @property
    def failed(self) -> bool:
        return self.status == FAILED


def failed_result(task: FetchTask, source_tag: str = "") -> FetchResult:
    return FetchResult(task=task, values=(), source_tag=source_tag, status=FAILED,
                       retrieved_at=_now())


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _to_value(text) -> float | None:
    if text is None:
        return None
    if isinstance(text, (int, float)):
        v = float(text)
    else:
        s = str(text).strip()
        if not s or s.lower() in ("nan", "na", "null", "none"):
            return None
        v = float(s)
    return v if math.isfinite(v) else None


def _window_filter(task: FetchTask, pairs) -> tuple:
    out = {}
    for d, v in pairs:
        iso = normalise_date(d)
        if iso is None:
            raise ParsePayloadError(f"unparseable date {d!r}")
        if task.window_start <= iso <= task.window_end:
            out[iso] = v
    return tuple(sorted(out.items()))


def parse_csv_payload(text: str) -> tuple[tuple, str, str]:
    """Parse ``date,value`` text. Returns (pairs, units, value-column name).

    Leading ``# key: value`` lines are metadata; ``units`` is recognised.
    """
    units = ""
    body = []
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            if key.strip().lower() == "units":
                units = val.strip()
            continue
        if line.strip():
            body.append(line)
    if not body:
        raise ParsePayloadError("empty payload")
    reader = csv.reader(body)
    header = [h.strip() for h in next(reader)]
    if len(header) < 2 or header[0].lower() != "date":
        raise ParsePayloadError(f"expected a date,value header, got {header}")
    pairs = []
    try:
        for row in reader:
            pairs.append((row[0].strip(), _to_value(row[1] if len(row) > 1 else "")))
    except ValueError as exc:
        raise ParsePayloadError(str(exc)) from exc
    column = header[1] if header[1].lower() != "value" else ""
    return tuple(pairs), units, column


def parse_json_payload(text: str) -> tuple[tuple, str, str]:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParsePayloadError(str(exc)) from exc
    if not isinstance(data, list):
        raise ParsePayloadError("expected a flat JSON array")
    pairs = []
    units = ""
    try:
        for item in data:
            if isinstance(item, dict):
                pairs.append((str(item["date"]), _to_value(item.get("value"))))
                units = units or str(item.get("units", "") or "")
            else:
                pairs.append((str(item[0]), _to_value(item[1])))
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise ParsePayloadError(f"malformed JSON record: {exc}") from exc
    return tuple(pairs), units, ""


# -- derivations -------------------------------------------------------------

def derive_variable(rule: str, inputs: dict) -> Series:
    """Apply a derivation rule to date-aligned input series.

    ``inputs`` maps input names (NIR/RED/BLUE or PEV/TP) to lists of
    ``(date, value)`` pairs; ``None`` marks a missing value.
    """
    names = DERIVATION_INPUTS.get(rule)
    if names is None:
        raise ValueError(f"no derivation for rule {rule!r}")
    absent = [n for n in names if n not in inputs]
    if absent:
        raise MissingInputSeries(f"{rule}: missing input series {absent}")
    dates = [d for d, _ in inputs[names[0]]]
    cols = {}
    for n in names:
        if [d for d, _ in inputs[n]] != dates:
            raise MisalignedDates(f"{rule}: input {n} is not aligned with {names[0]}")
        cols[n] = [v for _, v in inputs[n]]

    out = []
    for i, d in enumerate(dates):
        vals = [cols[n][i] for n in names]
        if any(v is None for v in vals):
            out.append((d, None))
            continue
        if rule == "EVI":
            nir, red, blue = vals
            denom = nir + 6.0 * red - 7.5 * blue + 1.0
            out.append((d, None if abs(denom) < EVI_DENOMINATOR_FLOOR
                        else 2.5 * (nir - red) / denom))
        else:
            pev, tp = vals
            out.append((d, max(0.0, pev - tp)))
    return out


def align_series(inputs: dict) -> dict:
    """Outer-join several series on date, filling gaps with None."""
    dates = sorted({d for s in inputs.values() for d, _ in s})
    out = {}
    for name, s in inputs.items():
        lookup = dict(s)
        out[name] = [(d, lookup.get(d)) for d in dates]
    return out


# -- fetchers ----------------------------------------------------------------

class Fetcher:
    """Base fetcher. ``platforms=None`` claims any platform as a fallback."""

    name = "fetcher"

    def __init__(self, platforms=None):
        self.platforms = None if platforms is None else frozenset(platforms)

    def claims(self, platform: str) -> bool:
        return self.platforms is None or platform in self.platforms

    def fetch(self, task: FetchTask) -> FetchResult:
        raise NotImplementedError


def sanitise(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", name).strip("_") or "_"


class LocalFixtureFetcher(Fetcher):
    name = "local_fixture"

    def __init__(self, root, platforms=None):
        super().__init__(platforms)
        self.root = Path(root)

    def path_for(self, task: FetchTask) -> Path:
        return self.root / sanitise(task.platform) / sanitise(task.key_variable) / f"{sanitise(task.field_id)}.csv"

    def fetch(self, task):
        path = self.path_for(task)
        if not path.is_file():
            log.debug("fixture missing: %s", path)
            return failed_result(task, self.name)
        try:
            pairs, units, column = parse_csv_payload(path.read_text(encoding="utf-8"))
            values = _window_filter(task, pairs)
        except ParsePayloadError as exc:
            log.warning("bad fixture %s: %s", path, exc)
            return failed_result(task, self.name)
        return FetchResult(task=task, values=values, units=units, source_tag=self.name,
                           column=column, retrieved_at=_now())


def register_local_fixture_fetcher(root, platforms=None) -> LocalFixtureFetcher:
    return LocalFixtureFetcher(root, platforms)


class RateLimiter:
    def __init__(self, rps: float | None):
        self.interval = 1.0 / rps if rps else 0.0
        self._next = 0.0
        self._lock = threading.Lock()

    def wait(self, sleep=time.sleep):
        if not self.interval:
            return
        with self._lock:
            now = time.monotonic()
            delay = self._next - now
            self._next = max(now, self._next) + self.interval
        if delay > 0:
            sleep(delay)


class HttpFetcher(Fetcher):
    """Generic point time-series client driven by a URL template.

    The template may use ``{lat} {lon} {start} {end} {param}``; responses
    are ``date,value`` CSV or a flat JSON array.
    """

    name = "http"
    retry_statuses = frozenset({429, 500, 502, 503, 504})

    def __init__(self, base_url, auth=None, platforms=None, attempts=3, base_delay=1.0,
                 factor=2.0, rps=None, timeout=30.0, transport=None, sleep=time.sleep):
        super().__init__(platforms)
        missing = [p for p in ("lat", "lon", "start", "end", "param") if "{" + p + "}" not in base_url]
        if missing:
            raise ValueError(f"URL template lacks placeholders {missing}")
        self.base_url = base_url
        self.attempts = attempts
        self.base_delay = base_delay
        self.factor = factor
        self.sleep = sleep
        self.limiter = RateLimiter(rps)
        headers = {"Authorization": f"Bearer {auth}"} if auth else {}
        self.client = httpx.Client(headers=headers, timeout=timeout, transport=transport)

    def url_for(self, task):
        return self.base_url.format(lat=task.lat, lon=task.lon, start=task.window_start,
                                    end=task.window_end, param=task.api_parameter)

    def _get(self, url) -> httpx.Response:
        last = None
        for attempt in range(self.attempts):
            if attempt:
                self.sleep(self.base_delay * self.factor ** (attempt - 1))
            self.limiter.wait(self.sleep)
            try:
                resp = self.client.get(url)
            except httpx.TransportError as exc:
                last = exc
                log.info("transport error on %s (attempt %d): %s", url, attempt + 1, exc)
                continue
            if resp.status_code == 200:
                return resp
            last = HttpStatusError(resp.status_code, url)
            if resp.status_code not in self.retry_statuses:
                break
            log.info("HTTP %d on %s (attempt %d)", resp.status_code, url, attempt + 1)
        if isinstance(last, HttpStatusError):
            raise last
        raise HttpStatusError(None, url) from last

    def fetch(self, task):
        url = self.url_for(task)
        try:
            resp = self._get(url)
            text = resp.text
            if text.lstrip().startswith("["):
                pairs, units, column = parse_json_payload(text)
            else:
                pairs, units, column = parse_csv_payload(text)
            values = _window_filter(task, pairs)
        except (HttpStatusError, ParsePayloadError) as exc:
            log.warning("fetch failed for %s/%s: %s", task.field_id, task.key_variable, exc)
            return failed_result(task, self.name)
        return FetchResult(task=task, values=values, units=units, source_tag=self.name,
                           column=column, retrieved_at=_now())

    def close(self):
        self.client.close()


def register_http_fetcher(base_url, auth=None, **kwargs) -> HttpFetcher:
    return HttpFetcher(base_url, auth=auth, **kwargs)


class FetcherRegistry:
    """Resolves a platform to exactly one fetcher.

    Explicit platform claims take precedence over catch-all fetchers.
    """

    def __init__(self, fetchers=()):
        self.fetchers = list(fetchers)

    def add(self, fetcher):
        self.fetchers.append(fetcher)

    def resolve(self, platform: str) -> Fetcher:
        explicit = [f for f in self.fetchers if f.platforms is not None and platform in f.platforms]
        if len(explicit) == 1:
            return explicit[0]
        if len(explicit) > 1:
            raise NoFetcherForPlatform(f"platform {platform!r} claimed by several fetchers")
        fallback = [f for f in self.fetchers if f.platforms is None]
        if len(fallback) == 1:
            return fallback[0]
        if len(fallback) > 1:
            raise NoFetcherForPlatform(f"platform {platform!r} claimed by several catch-all fetchers")
        raise NoFetcherForPlatform(f"no fetcher registered for platform {platform!r}")


# -- cache -------------------------------------------------------------------

def cache_key(task: FetchTask) -> str:
    raw = "|".join([task.platform, task.key_variable, task.field_id, task.window_start,
                    task.window_end, task.api_parameter])
    return hashlib.sha256(raw.encode("utf-8")).hexdigest()


def _fmt(v) -> str:
    return "" if v is None else repr(v)


class FetchCache:
    """One CSV per task plus a ``.sha256`` sidecar."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def _lock(self, key):
        with self._guard:
            return self._locks.setdefault(key, threading.Lock())

    def paths(self, key):
        return self.root / f"{key}.csv", self.root / f"{key}.sha256"

    def load(self, task: FetchTask) -> FetchResult | None:
        key = cache_key(task)
        data_path, sum_path = self.paths(key)
        with self._lock(key):
            if not data_path.exists():
                return None
            blob = data_path.read_bytes()
            expected = sum_path.read_text().strip() if sum_path.exists() else ""
            if hashlib.sha256(blob).hexdigest() != expected:
                data_path.unlink(missing_ok=True)
                sum_path.unlink(missing_ok=True)
                raise CacheCorruption(f"checksum mismatch for cache entry {key}")
        meta = {}
        pairs = []
        for line in blob.decode("utf-8").splitlines():
            if line.startswith("#"):
                k, _, v = line[1:].partition(":")
                meta[k.strip()] = v.strip()
            elif line and line != "date,value":
                d, _, v = line.partition(",")
                pairs.append((d, float(v) if v else None))
        return FetchResult(task=task, values=tuple(pairs), units=meta.get("units", ""),
                           source_tag=meta.get("source_tag", ""), status=OK,
                           column=meta.get("column", ""), retrieved_at=meta.get("retrieved_at", ""))

    def store(self, result: FetchResult) -> None:
        key = cache_key(result.task)
        data_path, sum_path = self.paths(key)
        lines = [
            f"# units: {result.units}",
            f"# source_tag: {result.source_tag}",
            f"# column: {result.column}",
            f"# retrieved_at: {result.retrieved_at}",
            "date,value",
        ]
        lines += [f"{d},{_fmt(v)}" for d, v in result.values]
        blob = ("\n".join(lines) + "\n").encode("utf-8")
        with self._lock(key):
            tmp = data_path.with_suffix(".tmp")
            tmp.write_bytes(blob)
            os.replace(tmp, data_path)
            sum_path.write_text(hashlib.sha256(blob).hexdigest() + "\n")


# -- batch -------------------------------------------------------------------

def _component_task(task: FetchTask, name: str) -> FetchTask:
    return replace(task, key_variable=name, api_parameter=name, derivation="NONE")


def _fetch_one(task: FetchTask, registry: FetcherRegistry) -> FetchResult:
    fetcher = registry.resolve(task.platform)
    if task.derivation not in DERIVATION_INPUTS:
        return fetcher.fetch(task)
    parts = {}
    units = ""
    for name in DERIVATION_INPUTS[task.derivation]:
        res = fetcher.fetch(_component_task(task, name))
        if res.failed:
            return failed_result(task, fetcher.name)
        parts[name] = list(res.values)
        units = units or res.units
    values = derive_variable(task.derivation, align_series(parts))
    return FetchResult(task=task, values=tuple(values), units="" if task.derivation == "EVI" else units,
                       source_tag=fetcher.name, retrieved_at=_now())


def fetch_batch(plan, fetchers, cache: FetchCache | None = None, max_workers: int = 8) -> list[FetchResult]:
    """Run every task in ``plan``; results come back in plan order.

    Tasks whose platform nobody claims raise NoFetcherForPlatform before any
    network or disk work starts. Fetch failures degrade to FAILED results.
    """
    registry = fetchers if isinstance(fetchers, FetcherRegistry) else FetcherRegistry(fetchers)
    for task in plan:
        registry.resolve(task.platform)

    def run(task):
        if cache is not None:
            try:
                hit = cache.load(task)
            except CacheCorruption as exc:
                log.warning("%s; refetching", exc)
                hit = None
            if hit is not None:
                return hit
        try:
            res = _fetch_one(task, registry)
        except Exception as exc:  # a broken fetcher must not abort the batch
            log.warning("fetch error for %s/%s: %s", task.field_id, task.key_variable, exc)
            res = failed_result(task)
        if cache is not None and not res.failed:
            cache.store(res)
        return res

    if max_workers <= 1 or len(plan) <= 1:
        return [run(t) for t in plan]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(run, plan))


# -- long-form persistence ---------------------------------------------------

LONG_COLUMNS = ["field_id", "key_variable", "platform", "source_tag", "status", "units", "column",
                "date", "value"]


def write_results(results, path) -> None:
    """Long-form dump of a batch (one row per observation; FAILED tasks get one
    row with an empty date)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LONG_COLUMNS)
    for r in sorted(results, key=lambda r: (r.task.field_id, r.task.key_variable)):
        head = [r.task.field_id, r.task.key_variable, r.task.platform, r.source_tag, r.status,
                r.units, r.column]
        if not r.values:
            w.writerow(head + ["", ""])
        for d, v in r.values:
            w.writerow(head + [d, _fmt(v)])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_results(path, plan) -> list[FetchResult]:
    by_key = {(t.field_id, t.key_variable): t for t in plan}
    grouped: dict = {}
    meta: dict = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            k = (row["field_id"], row["key_variable"])
            meta[k] = row
            vals = grouped.setdefault(k, [])
            if row["date"]:
                vals.append((row["date"], float(row["value"]) if row["value"] else None))
    out = []
    for k, vals in grouped.items():
        m = meta[k]
        out.append(FetchResult(task=by_key[k], values=tuple(vals), units=m["units"],
                               source_tag=m["source_tag"], status=m["status"], column=m["column"]))
    return out
