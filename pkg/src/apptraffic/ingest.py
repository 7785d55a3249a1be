"""Traffic CSV ingestion: parse, merge co-located antennas, filter, roll up hourly.

The rollup is single-pass and keyed by (antenna coordinate, hour, category);
when the accumulator exceeds ``row_budget`` keys it spills a sorted shard to
disk and the shards are k-way merged at the end.
"""

import csv
import heapq
import json
import logging
import math
import os
import tempfile
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from fractions import Fraction
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from .errors import ConfigError, FormatError, IngestError
from .geometry import equirectangular

log = logging.getLogger(__name__)

TRAFFIC_COLUMNS = ("timestamp_utc", "lat", "lon", "app_id", "uplink_bytes", "downlink_bytes")
ROLLUP_COLUMNS = ["site_id", "hour_utc", "category", "total_bytes"]
EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


@dataclass(frozen=True)
class TrafficRecord:
    timestamp: datetime
    lat: float
    lon: float
    app_id: str
    uplink_bytes: int
    downlink_bytes: int

    @property
    def total_bytes(self):
        return self.uplink_bytes + self.downlink_bytes

    @property
    def hour(self):
        return hour_index(self.timestamp)


@dataclass(frozen=True)
class Station:
    id: int
    lat: float
    lon: float
    antennas: int = 1


@dataclass
class ParseStats:
    lines: int = 0
    valid: int = 0
    malformed: int = 0
    out_of_window: int = 0

    def merge(self, other):
        for k in ("lines", "valid", "malformed", "out_of_window"):
            setattr(self, k, getattr(self, k) + getattr(other, k))


@dataclass
class TrafficSchema:
    """Column names and validation limits for traffic CSV input."""

    columns: tuple = TRAFFIC_COLUMNS
    window_start: datetime | None = None
    window_end: datetime | None = None
    max_malformed_fraction: float = 0.01


def parse_timestamp(text):
    """ISO minute timestamp, UTC. Accepts a trailing ``Z`` or ``+00:00``."""
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1]
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def hour_index(ts):
    """Whole hours since the Unix epoch."""
    return int((ts - EPOCH).total_seconds() // 3600)


def format_hour(h):
    return (EPOCH + timedelta(hours=int(h))).strftime("%Y-%m-%dT%H:00Z")


def parse_hour(text):
    return hour_index(parse_timestamp(text))


def _data_lines(lines):
    for line in lines:
        if line.startswith("#"):
            continue
        yield line


def _valid_rows(lines, schema, stats):
    """Validated (timestamp, lat, lon, app_id, up, down) tuples; see parse_traffic."""
    reader = csv.reader(_data_lines(lines))
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError("traffic stream has no header row") from None
    header = [h.strip() for h in header]
    missing = [c for c in schema.columns if c not in header]
    if missing:
        raise FormatError(f"missing required column(s): {', '.join(missing)}")
    i_ts, i_lat, i_lon, i_app, i_up, i_down = (header.index(c) for c in schema.columns)
    width = len(header)
    start, end = schema.window_start, schema.window_end
    ts_cache = {}
    lines_seen = malformed = out_of_window = valid = 0

    try:
        for row in reader:
            if not row:
                continue
            lines_seen += 1
            if len(row) != width:
                malformed += 1
                continue
            try:
                raw_ts = row[i_ts]
                ts = ts_cache.get(raw_ts)
                if ts is None:
                    ts = parse_timestamp(raw_ts)
                    ts_cache[raw_ts] = ts
                lat = float(row[i_lat])
                lon = float(row[i_lon])
                up = int(row[i_up])
                down = int(row[i_down])
            except ValueError:
                malformed += 1
                continue
            app = row[i_app].strip()
            if (
                up < 0 or down < 0 or not app
                or not (math.isfinite(lat) and math.isfinite(lon))
                or abs(lat) > 90 or abs(lon) > 180
            ):
                malformed += 1
                continue
            if (start is not None and ts < start) or (end is not None and ts >= end):
                out_of_window += 1
                continue
            valid += 1
            yield ts, lat, lon, app, up, down
    finally:
        stats.lines += lines_seen
        stats.malformed += malformed
        stats.out_of_window += out_of_window
        stats.valid += valid

    if lines_seen and malformed / lines_seen > schema.max_malformed_fraction:
        raise IngestError(
            f"{malformed} of {lines_seen} lines malformed "
            f"(limit {schema.max_malformed_fraction:.2%})"
        )


def parse_traffic(lines, schema=None, stats=None):
    """Yield TrafficRecord for each valid line of a traffic CSV stream.

    Malformed lines (wrong field count, unparsable or negative numbers, bad
    timestamps, out-of-range coordinates) are skipped and counted in ``stats``.
    Once the stream is exhausted, IngestError is raised if the malformed share
    exceeds ``schema.max_malformed_fraction``.
    """
    schema = schema or TrafficSchema()
    stats = stats if stats is not None else ParseStats()
    for row in _valid_rows(lines, schema, stats):
        yield TrafficRecord(*row)


def read_category_map(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(_data_lines(fh))
        if reader.fieldnames is None or not {"app_id", "category"} <= set(reader.fieldnames):
            raise FormatError(f"{path}: category map needs columns app_id,category")
        mapping = {}
        for row in reader:
            app, cat = row["app_id"].strip(), row["category"].strip()
            if app in mapping and mapping[app] != cat:
                raise FormatError(f"{path}: app {app!r} mapped to two categories")
            mapping[app] = cat
    return mapping


# -- antenna grouping ----------------------------------------------------------


def _union_find(n, pairs):
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    return [find(a) for a in range(n)]


def cluster_coordinates(coords, epsilon_m=0.0):
    """Assign site ids to antenna coordinates.

    ``coords`` is an iterable of (lat, lon). Coordinates closer than
    ``epsilon_m`` meters are merged by single linkage (chains merge
    transitively). Sites are numbered by ascending smallest member (lat, lon);
    a merged site sits at its members' mean position.

    Returns (stations, {(lat, lon): site_id}).
    """
    if epsilon_m < 0:
        raise ConfigError("antenna epsilon must be >= 0")
    uniq = sorted(set(coords))
    if not uniq:
        return [], {}
    if epsilon_m == 0:
        roots = list(range(len(uniq)))
    else:
        arr = np.array(uniq)
        x, y = equirectangular(arr[:, 1], arr[:, 0], arr[:, 1].mean(), arr[:, 0].mean())
        pairs = cKDTree(np.column_stack([x, y])).query_pairs(epsilon_m, output_type="ndarray")
        roots = _union_find(len(uniq), pairs.tolist())
    # roots are the smallest member index, and uniq is sorted, so root order = site order
    root_ids = {r: i for i, r in enumerate(sorted(set(roots)))}
    members = defaultdict(list)
    for c, r in zip(uniq, roots):
        members[root_ids[r]].append(c)
    stations = []
    for sid in range(len(root_ids)):
        m = members[sid]
        stations.append(Station(
            sid, float(np.mean([c[0] for c in m])), float(np.mean([c[1] for c in m])), len(m)
        ))
    lookup = {c: root_ids[r] for c, r in zip(uniq, roots)}
    return stations, lookup


def group_antennas(records, epsilon=0.0):
    """Merge antennas into base stations.

    Returns (stations, [(site_id, record), ...]).
    """
    records = list(records)
    stations, lookup = cluster_coordinates(((r.lat, r.lon) for r in records), epsilon)
    return stations, [(lookup[(r.lat, r.lon)], r) for r in records]


# -- percentile filter ---------------------------------------------------------


def app_totals(records):
    totals = defaultdict(int)
    for r in records:
        totals[r.app_id] += r.uplink_bytes + r.downlink_bytes
    return dict(totals)


def select_top_apps(totals, percentile):
    """Smallest set of apps, by descending traffic, reaching ``percentile`` % of
    the grand total. Ties rank by app id."""
    p = Fraction(str(percentile))
    if not (0 < p <= 100):
        raise ConfigError("percentile must be in (0, 100]", "ingest.percentile")
    grand = sum(totals.values())
    ranked = sorted(totals.items(), key=lambda kv: (-kv[1], kv[0]))
    kept, cum = set(), 0
    for app, t in ranked:
        if kept and cum * 100 >= p * grand:
            break
        kept.add(app)
        cum += t
    return kept


def top_percentile_filter(records, percentile):
    records = list(records)
    kept = select_top_apps(app_totals(records), percentile)
    return [r for r in records if r.app_id in kept]


# -- rollup --------------------------------------------------------------------


class RollupAccumulator:
    """Summing key -> int table with a bounded number of in-memory keys."""

    def __init__(self, row_budget=5_000_000, spill_dir=None):
        self.row_budget = row_budget
        self.spill_dir = spill_dir
        self.table = defaultdict(int)
        self.shards = []

    def add(self, key, value):
        self.table[key] += value
        if len(self.table) > self.row_budget:
            self._spill()

    def _spill(self):
        fd, name = tempfile.mkstemp(prefix="rollup-", suffix=".jsonl", dir=self.spill_dir)
        with os.fdopen(fd, "w") as fh:
            for key in sorted(self.table):
                fh.write(json.dumps([key, self.table[key]]))
                fh.write("\n")
        self.shards.append(name)
        self.table = defaultdict(int)

    @staticmethod
    def _read_shard(name):
        with open(name) as fh:
            for line in fh:
                key, value = json.loads(line)
                yield tuple(key), value

    def items(self):
        """Sorted (key, total) pairs; consumes the spill shards."""
        streams = [self._read_shard(s) for s in self.shards]
        streams.append(iter(sorted(self.table.items())))
        cur_key, cur_val = None, 0
        try:
            for key, value in heapq.merge(*streams, key=lambda kv: kv[0]):
                if key == cur_key:
                    cur_val += value
                    continue
                if cur_key is not None:
                    yield cur_key, cur_val
                cur_key, cur_val = key, value
            if cur_key is not None:
                yield cur_key, cur_val
        finally:
            for s in self.shards:
                os.unlink(s)
            self.shards = []
            self.table = defaultdict(int)


def _rollup_frame(rows):
    df = pd.DataFrame(rows, columns=ROLLUP_COLUMNS)
    df = df.astype({"site_id": "int64", "hour_utc": "int64", "total_bytes": "int64"})
    return df.sort_values(["site_id", "hour_utc", "category"], kind="mergesort").reset_index(drop=True)


def categorize_and_rollup(records_by_site, category_map, stats=None):
    """Sum uplink+downlink per (site, hour, category).

    ``records_by_site`` yields (site_id, TrafficRecord). Unmapped apps are
    dropped and counted in ``stats["unmapped"]``.
    """
    stats = stats if stats is not None else {}
    stats.setdefault("unmapped", 0)
    acc = defaultdict(int)
    for sid, r in records_by_site:
        cat = category_map.get(r.app_id)
        if cat is None:
            stats["unmapped"] += 1
            continue
        acc[(sid, hour_index(r.timestamp), cat)] += r.uplink_bytes + r.downlink_bytes
    return _rollup_frame([(s, h, c, v) for (s, h, c), v in acc.items()])


@dataclass
class IngestResult:
    stations: list
    rollup: pd.DataFrame
    stats: dict = field(default_factory=dict)
    kept_apps: list = field(default_factory=list)


def _open_lines(path):
    return open(path, newline="", encoding="utf-8")


def ingest_files(
    paths,
    category_map,
    schema=None,
    percentile=99.0,
    percentile_filter=True,
    epsilon_m=0.0,
    row_budget=5_000_000,
    spill_dir=None,
):
    """Full file-level ingestion: optional top-percentile app filter (first pass),
    then category mapping and hourly rollup (second pass)."""
    schema = schema or TrafficSchema()
    paths = [Path(p) for p in ([paths] if isinstance(paths, (str, Path)) else paths)]

    kept = None
    if percentile_filter:
        totals = defaultdict(int)
        for p in paths:
            with _open_lines(p) as fh:
                for _, _, _, app, up, down in _valid_rows(fh, schema, ParseStats()):
                    totals[app] += up + down
        kept = select_top_apps(totals, percentile) if totals else set()

    parse_stats = ParseStats()
    acc = RollupAccumulator(row_budget, spill_dir)
    counts = {"filtered": 0, "unmapped": 0}
    ts_hours = {}
    for p in paths:
        file_stats = ParseStats()
        with _open_lines(p) as fh:
            for ts, lat, lon, app, up, down in _valid_rows(fh, schema, file_stats):
                if kept is not None and app not in kept:
                    counts["filtered"] += 1
                    continue
                cat = category_map.get(app)
                if cat is None:
                    counts["unmapped"] += 1
                    continue
                h = ts_hours.get(ts)
                if h is None:
                    h = ts_hours[ts] = hour_index(ts)
                acc.add((lat, lon, h, cat), up + down)
        parse_stats.merge(file_stats)

    items = list(acc.items())
    stations, lookup = cluster_coordinates(((k[0], k[1]) for k, _ in items), epsilon_m)
    by_site = defaultdict(int)
    for (lat, lon, h, cat), v in items:
        by_site[(lookup[(lat, lon)], h, cat)] += v
    rollup = _rollup_frame([(s, h, c, v) for (s, h, c), v in by_site.items()])

    stats = {
        "lines": parse_stats.lines,
        "valid": parse_stats.valid,
        "malformed": parse_stats.malformed,
        "out_of_window": parse_stats.out_of_window,
        "filtered_records": counts["filtered"],
        "unmapped_records": counts["unmapped"],
        "stations": len(stations),
        "rollup_rows": len(rollup),
        "total_bytes": int(rollup["total_bytes"].sum()) if len(rollup) else 0,
    }
    kept_apps = sorted(kept) if kept is not None else []
    log.info("ingested %d valid lines into %d stations", parse_stats.valid, len(stations))
    return IngestResult(stations, rollup, stats, kept_apps)


def format_hours(hours):
    """Vectorized :func:`format_hour`; formats each distinct hour once."""
    uniq, inv = np.unique(np.asarray(hours, dtype=np.int64), return_inverse=True)
    return np.array([format_hour(h) for h in uniq], dtype=object)[inv.ravel()]


def parse_hours(texts):
    uniq, inv = np.unique(np.asarray(texts, dtype=str), return_inverse=True)
    return np.array([parse_hour(t) for t in uniq], dtype=np.int64)[inv.ravel()]


def rollup_to_csv_frame(rollup):
    out = rollup.copy()
    out["hour_utc"] = format_hours(out["hour_utc"]) if len(out) else []
    return out


def rollup_from_csv_frame(df):
    df = df.copy()
    df["hour_utc"] = parse_hours(df["hour_utc"]) if len(df) else np.array([], dtype=np.int64)
    return df
