"""Synthetic scenario generator with planted socio-economic signal.

A scenario is a lon/lat box region tiled by a (possibly perturbed) zone grid,
random base stations, per-zone indicators driven by a smooth income field,
and hourly traffic per (station, app). Station traffic for category c at
local hour-of-week h is

    V_c * (P_s / 1000)^pop_effect * base_c[h]
        * exp(volume_c * I_s + shape_c * I_s * pattern_c[h] + eta_sc + eps_sct)

with the shape term renormalized so the weekly total is unchanged. P_s is
the covered population of the zones overlapping the station's Voronoi cell
(true areal weights), eta is a per station-category log-normal level and eps
per-record log-normal noise.

The zone income index mixes two independent smooth fields,
sqrt(shape_share) * F_shape + sqrt(1 - shape_share) * F_volume, plus zone
noise. The shape term reads the station average of F_shape and the volume
term that of F_volume, so daily rhythm (TWS) and category mix (RCA) each
carry part of the income signal and only their union carries all of it.
"""

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np
import pandas as pd
from shapely.geometry import Point, Polygon, box

from . import geometry
from .errors import ConfigError
from .geometry import Zone
from .ingest import Station, format_hour, parse_hour
from .io import file_sha256, read_json, read_table, write_geojson, write_json, write_table
from .profiles import CATEGORIES, load_profiles

log = logging.getLogger(__name__)

PATTERNS = ("office", "evening")
SUPPRESS_BELOW = 1000
SUPPRESSED = ("poverty", "median_income", "gini")
AGE_COLUMNS = ("pop_0_14", "pop_15_29", "pop_30_44", "pop_45_59", "pop_60_74", "pop_75p")
CS_COLUMNS = tuple(f"cs{i}" for i in range(1, 9))
EDU_COLUMNS = ("no_diploma", "bepc_capbep", "bac", "sup")

# bytes per hour per 1000 covered residents, before profile and effects
_VOLUME = {
    "advertising": 2e6, "android_download": 4e6, "apple_cloud": 5e6, "email": 3e6,
    "gaming": 6e6, "maps_navigation": 2.5e6, "messaging": 4e6, "music": 8e6, "news": 2e6,
    "productivity": 3e6, "shopping": 3e6, "social_media": 1.5e7, "social_media_video": 2e7,
    "sports": 2e6, "travel": 1.5e6, "video_streaming": 3e7, "voip": 5e6, "web_browsing": 1.2e7,
    "weather": 1e6,
}
_UPLINK_FRACTION = 0.15


@dataclass
class CategorySignal:
    volume: float = 0.0
    shape: float = 0.0
    pattern: str | None = None


def default_signal():
    """Income effects: office-hour usage rises with income, evening leisure falls."""
    return {
        "email": CategorySignal(0.15, 0.35, "office"),
        "productivity": CategorySignal(0.15, 0.35, "office"),
        "apple_cloud": CategorySignal(0.2, 0.2, "office"),
        "social_media": CategorySignal(-0.15, -0.3, "evening"),
        "social_media_video": CategorySignal(-0.12, -0.3, "evening"),
        "gaming": CategorySignal(-0.12, -0.25, "evening"),
        "android_download": CategorySignal(-0.15, 0.0, None),
        "travel": CategorySignal(0.15, 0.0, None),
    }


@dataclass
class ScenarioSpec:
    seed: int = 0
    n_stations: int = 200
    grid: tuple = (20, 25)
    categories: tuple = CATEGORIES
    weeks: int = 2
    start: str = "2019-03-16T00:00"
    tz_offset_hours: int = 1
    region: tuple = (2.2, 48.75, 2.5, 48.95)
    signal: dict = field(default_factory=default_signal)
    hourly_noise: float = 0.5
    station_noise: float = 0.6
    zone_noise: float = 0.3
    shape_share: float = 0.6
    spatial_income: bool = True
    population: tuple = (800, 4000)
    population_effect: float = 1.0
    perturbed: bool = False
    station_layout: str = "random"
    tail_apps: int = 5
    tail_share: float = 0.015
    unmapped_share: float = 0.02

    def validate(self):
        if self.n_stations < 4:
            raise ConfigError("need at least 4 stations", "scenario.n_stations")
        if len(self.grid) != 2 or self.grid[0] * self.grid[1] < 9 or min(self.grid) < 1:
            raise ConfigError("zone grid needs at least 9 zones", "scenario.grid")
        if self.weeks < 1:
            raise ConfigError("need at least one week", "scenario.weeks")
        if self.station_layout not in ("random", "zone_centers"):
            raise ConfigError("station_layout must be random or zone_centers", "scenario.station_layout")
        if self.station_layout == "zone_centers" and self.n_stations != self.grid[0] * self.grid[1]:
            raise ConfigError("zone_centers layout needs one station per zone", "scenario.n_stations")
        unknown = set(self.categories) - set(CATEGORIES)
        if unknown:
            raise ConfigError(f"no base profile for {sorted(unknown)}", "scenario.categories")
        for cat, sig in self.signal.items():
            if cat not in self.categories:
                raise ConfigError(f"signal for unknown category {cat!r}", "scenario.signal")
            if not (math.isfinite(sig.volume) and math.isfinite(sig.shape)):
                raise ConfigError("effect sizes must be finite", f"scenario.signal.{cat}")
            if sig.shape and sig.pattern not in PATTERNS:
                raise ConfigError(f"pattern must be one of {PATTERNS}", f"scenario.signal.{cat}")
        for name in ("hourly_noise", "station_noise", "zone_noise", "tail_share", "unmapped_share"):
            if getattr(self, name) < 0:
                raise ConfigError("must be >= 0", f"scenario.{name}")
        if not 0 <= self.shape_share <= 1:
            raise ConfigError("must be in [0, 1]", "scenario.shape_share")
        lo, hi = self.population
        if not 0 < lo <= hi:
            raise ConfigError("population range must satisfy 0 < lo <= hi", "scenario.population")
        return self

    def to_dict(self):
        d = asdict(self)
        d["grid"] = list(self.grid)
        d["categories"] = list(self.categories)
        d["region"] = list(self.region)
        d["population"] = list(self.population)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "signal" in d:
            d["signal"] = {k: CategorySignal(**v) if isinstance(v, dict) else v
                           for k, v in d["signal"].items()}
        for key in ("grid", "categories", "region", "population"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def preset(cls, name, **overrides):
        """``planted`` (default signal), ``null`` (no effects) or ``noiseless``."""
        if name == "planted":
            spec = cls()
        elif name == "null":
            # independent zone incomes: neighbours sharing a station must not
            # let traffic fingerprints stand in for income
            spec = cls(signal={}, spatial_income=False)
        elif name == "noiseless":
            spec = cls(hourly_noise=0.0, station_noise=0.0, zone_noise=0.0)
        else:
            raise ConfigError(f"unknown scenario preset {name!r}", "scenario.preset")
        return replace(spec, **overrides)


@dataclass
class Scenario:
    spec: ScenarioSpec
    out_dir: Path
    files: dict
    manifest: dict


# -- pieces ----------------------------------------------------------------------


def pattern_values(name):
    """Zero-mean, unit-std 168-slot indicator pattern (local hour of week)."""
    how = np.arange(168)
    day, hour = how // 24, how % 24
    if name == "office":
        raw = ((day < 5) & (hour >= 9) & (hour < 18)).astype(float)
    elif name == "evening":
        raw = ((hour >= 19) & (hour <= 23)).astype(float)
    else:
        raise ConfigError(f"unknown pattern {name!r}")
    return (raw - raw.mean()) / raw.std()


def zone_grid(region, grid, rng=None, jitter=0.0):
    """Zones tiling the box ``region`` (lon0, lat0, lon1, lat1) as rows x cols
    quads; interior vertices move by up to ``jitter`` cell sizes when rng is given."""
    lon0, lat0, lon1, lat1 = region
    rows, cols = grid
    xs = np.linspace(lon0, lon1, cols + 1)
    ys = np.linspace(lat0, lat1, rows + 1)
    vx, vy = np.meshgrid(xs, ys)
    if rng is not None and jitter > 0:
        dx, dy = (lon1 - lon0) / cols, (lat1 - lat0) / rows
        inner = (slice(1, -1), slice(1, -1))
        vx[inner] += rng.uniform(-jitter, jitter, vx[inner].shape) * dx
        vy[inner] += rng.uniform(-jitter, jitter, vy[inner].shape) * dy
    zones = []
    width = len(str(rows * cols - 1))
    for r in range(rows):
        for c in range(cols):
            ring = [(vx[r, c], vy[r, c]), (vx[r, c + 1], vy[r, c + 1]),
                    (vx[r + 1, c + 1], vy[r + 1, c + 1]), (vx[r + 1, c], vy[r + 1, c])]
            ring = [(float(a), float(b)) for a, b in ring]
            zid = "Z" + str(r * cols + c).zfill(max(4, width))
            zones.append(Zone(zid, Polygon(ring)))
    return zones


def _place_stations(spec, region_poly, zones, rng):
    """Stations sorted by (lat, lon) so ids match the ingest numbering."""
    lon0, lat0, lon1, lat1 = spec.region
    if spec.station_layout == "zone_centers":
        pts = [(round(z.shape.centroid.y, 6), round(z.shape.centroid.x, 6)) for z in zones]
    else:
        # ~1/4 of the mean spacing keeps stations distinct without a lattice look
        min_sep = 0.25 * math.sqrt((lon1 - lon0) * (lat1 - lat0) / spec.n_stations)
        pts = []
        while len(pts) < spec.n_stations:
            lat = round(float(rng.uniform(lat0, lat1)), 6)
            lon = round(float(rng.uniform(lon0, lon1)), 6)
            # infeasible draws are redrawn, never emitted
            if not region_poly.contains(Point(lon, lat)):
                continue
            if any(abs(lat - a) < min_sep and abs(lon - b) < min_sep for a, b in pts):
                continue
            pts.append((lat, lon))
    pts.sort()
    return [Station(i, lat, lon) for i, (lat, lon) in enumerate(pts)]


def _income_field(xy, rng, n_bumps=6, scale_m=4000.0):
    centers = rng.uniform(xy.min(axis=0), xy.max(axis=0), size=(n_bumps, 2))
    amps = rng.normal(0, 1, n_bumps)
    d2 = ((xy[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    f = (amps[None, :] * np.exp(-0.5 * d2 / scale_m**2)).sum(axis=1)
    f = f + 0.15 * (xy[:, 0] - xy[:, 0].mean()) / xy[:, 0].std()
    return (f - f.mean()) / f.std()


def _shares(rng, base, tilt, inc):
    """Per-zone composition shares: base proportions tilted by income."""
    logits = np.log(np.asarray(base))[None, :] + np.outer(inc, tilt)
    p = np.exp(logits)
    return p / p.sum(axis=1, keepdims=True)


def zone_indicators(zone_ids, inc, pop, rng):
    """Indicator table (Table-I short names) for zones with standardized
    income index ``inc`` and population ``pop``."""
    n = len(zone_ids)
    df = pd.DataFrame(index=pd.Index(zone_ids, name="zone_id"))
    df["poverty"] = np.clip(16.0 - 6.0 * inc + rng.normal(0, 2.0, n), 0.5, 60.0).round(2)
    df["median_income"] = np.round(22000.0 + 7000.0 * inc).clip(8000)
    df["gini"] = np.clip(0.30 + 0.035 * inc + rng.normal(0, 0.02, n), 0.15, 0.7).round(4)
    df["total_pop"] = pop

    age = _shares(rng, [0.18, 0.20, 0.21, 0.19, 0.14, 0.08], [-0.05, -0.05, 0.0, 0.05, 0.08, 0.1], inc)
    counts = np.array([rng.multinomial(p_, a) for p_, a in zip(pop, age)])
    for j, col in enumerate(AGE_COLUMNS):
        df[col] = counts[:, j]
    df["immigrants"] = rng.binomial(pop, np.clip(0.15 - 0.04 * inc, 0.02, 0.5))
    adults = pop - df["pop_0_14"].to_numpy()
    cs = _shares(rng, [0.005, 0.04, 0.12, 0.15, 0.16, 0.12, 0.27, 0.135],
                 [0.0, 0.05, 0.45, 0.15, -0.1, -0.35, 0.05, -0.1], inc)
    counts = np.array([rng.multinomial(a, p_) for a, p_ in zip(adults, cs)])
    for j, col in enumerate(CS_COLUMNS):
        df[col] = counts[:, j]
    df["male"] = rng.binomial(pop, 0.48)
    df["female"] = pop - df["male"].to_numpy()
    edu = _shares(rng, [0.3, 0.28, 0.17, 0.25], [-0.3, -0.15, 0.0, 0.4], inc)
    counts = np.array([rng.multinomial(a, p_) for a, p_ in zip(adults, edu)])
    for j, col in enumerate(EDU_COLUMNS):
        df[col] = counts[:, j]
    return df


def _covariates(weights, values):
    """Cell-area-weighted mean of a per-zone value, per station (row order of weights)."""
    return np.asarray(weights.tocsr() @ values).ravel()


# -- generation ------------------------------------------------------------------


def _app_table(spec, rng):
    apps = [(f"com.{cat}.app", cat, "main") for cat in spec.categories]
    tail_cats = [spec.categories[i % len(spec.categories)]
                 for i in rng.permutation(len(spec.categories))[: spec.tail_apps]]
    apps += [(f"com.tail{i + 1}", cat, "tail") for i, cat in enumerate(tail_cats)]
    if spec.unmapped_share > 0:
        apps.append(("com.unlisted", None, "unmapped"))
    return apps


def generate(spec, out_dir):
    """Write a scenario to ``out_dir``; returns a Scenario with file paths and manifest."""
    spec.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(spec.seed).spawn(4)
    rng_geo, rng_ind, rng_traffic, rng_minute = (np.random.default_rng(s) for s in seeds)

    region_ll = box(*spec.region)
    zones_ll = zone_grid(spec.region, spec.grid, rng_geo if spec.perturbed else None,
                         jitter=0.2 if spec.perturbed else 0.0)
    stations = _place_stations(spec, region_ll, zones_ll, rng_geo)
    region_p, zones_p, sites = geometry.project_scenario(region_ll, zones_ll, stations)
    tess = geometry.build_tessellation(sites, region_p)
    weights = geometry.areal_weights(tess, zones_p)

    zone_ids = [z.id for z in sorted(zones_p, key=lambda z: z.id)]
    centroids = np.array([[z.shape.centroid.x, z.shape.centroid.y]
                          for z in sorted(zones_p, key=lambda z: z.id)])
    if spec.spatial_income:
        f_shape = _income_field(centroids, rng_ind)
        f_volume = _income_field(centroids, rng_ind)
    else:
        f_shape = rng_ind.standard_normal(len(zone_ids))
        f_volume = rng_ind.standard_normal(len(zone_ids))
    # independent in-sample: remove the part of the volume field explained by the shape field
    f_volume = f_volume - (f_volume @ f_shape) / (f_shape @ f_shape) * f_shape
    f_volume = f_volume / f_volume.std()
    inc = math.sqrt(spec.shape_share) * f_shape + math.sqrt(1 - spec.shape_share) * f_volume
    if spec.zone_noise:
        inc = inc + rng_ind.normal(0, spec.zone_noise, len(zone_ids))
    inc = (inc - inc.mean()) / inc.std()
    lo, hi = spec.population
    pop = rng_ind.integers(lo, hi + 1, len(zone_ids))
    indicators = zone_indicators(zone_ids, inc, pop, rng_ind)
    suppressed = indicators["total_pop"] < SUPPRESS_BELOW
    indicators.loc[suppressed, list(SUPPRESSED)] = np.nan

    # station covariates from the true areal weights
    station_inc = _covariates(weights, inc)
    station_shape = _covariates(weights, f_shape)
    station_volume = _covariates(weights, f_volume)
    zone_area = np.array([z.shape.area for z in sorted(zones_p, key=lambda z: z.id)])
    cell_area = np.array([c.area for c in tess.cells])
    W = weights.tocsr()
    station_pop = np.asarray((W.multiply(cell_area[:, None])) @ (pop / zone_area)).ravel()

    start_h = parse_hour(spec.start)
    n_hours = 168 * spec.weeks
    hours = start_h + np.arange(n_hours)
    local = hours + spec.tz_offset_hours
    # 1970-01-01 was a Thursday: Monday-based weekday = (days + 3) % 7
    how = ((local // 24 + 3) % 7) * 24 + local % 24

    profiles = load_profiles()
    cats = list(spec.categories)
    S, C, T = len(stations), len(cats), n_hours
    log_rate = np.zeros((S, C, T))
    for j, cat in enumerate(cats):
        sig = spec.signal.get(cat, CategorySignal())
        base = np.log(_VOLUME[cat]) + np.log(profiles[cat][how])
        term = base[None, :] + sig.volume * station_volume[:, None]
        if sig.shape:
            tilt = sig.shape * station_shape[:, None] * pattern_values(sig.pattern)[how][None, :]
            # shape effects only move traffic within the week: the station's
            # noise-free weekly total for the category is kept
            w = profiles[cat][how][None, :]
            term = term + tilt - np.log((w * np.exp(tilt)).sum(axis=1, keepdims=True) / w.sum())
        log_rate[:, j, :] = term
    log_rate += spec.population_effect * np.log(station_pop / 1000.0)[:, None, None]
    if spec.station_noise:
        log_rate += rng_traffic.normal(0, spec.station_noise, (S, C))[:, :, None]
    if spec.hourly_noise:
        log_rate += rng_traffic.normal(0, spec.hourly_noise, (S, C, T))
    rate = np.exp(log_rate)

    apps = _app_table(spec, rng_traffic)
    cat_pos = {c: j for j, c in enumerate(cats)}
    station_total = rate.sum(axis=1)  # (S, T)
    grand = rate.sum()
    n_tail = sum(1 for a in apps if a[2] == "tail")
    blocks = []
    for app_id, cat, kind in apps:
        if kind == "main":
            vol = rate[:, cat_pos[cat], :]
        elif kind == "tail":
            share = spec.tail_share / max(n_tail, 1)
            vol = station_total * share * np.exp(rng_traffic.normal(0, 0.3, (S, T)))
            # tail apps are sparse: most station-hours carry none
            vol = vol * (rng_traffic.random((S, T)) < 0.3) / 0.3
        else:
            vol = station_total * spec.unmapped_share * np.exp(rng_traffic.normal(0, 0.3, (S, T)))
        blocks.append((app_id, np.rint(vol).astype(np.int64)))
    log.info("planted traffic: %.3g bytes over %d stations", grand, S)

    traffic_path = out / "traffic.csv"
    _write_traffic(traffic_path, stations, hours, blocks, rng_minute)

    region_path = out / "region.geojson"
    zones_path = out / "zones.geojson"
    indicators_path = out / "indicators.csv"
    catmap_path = out / "category_map.csv"
    truth_path = out / "stations_truth.csv"
    write_geojson(region_path, [({"name": "region"}, region_ll)])
    write_geojson(zones_path, [({"zone_id": z.id}, z.shape) for z in zones_ll])
    write_table(indicators_path, indicators.reset_index())
    write_table(catmap_path, pd.DataFrame([(a, c) for a, c, k in apps if c is not None],
                                          columns=["app_id", "category"]))
    write_table(truth_path, pd.DataFrame({
        "site_id": [s.id for s in stations], "lat": [s.lat for s in stations],
        "lon": [s.lon for s in stations], "income_index": station_inc, "shape_field": station_shape,
        "volume_field": station_volume, "covered_pop": station_pop,
    }))
    files = {"traffic": traffic_path, "region": region_path, "zones": zones_path,
             "indicators": indicators_path, "category_map": catmap_path, "truth": truth_path}
    manifest = {
        "spec": spec.to_dict(),
        "window": {"start": format_hour(start_h), "end": format_hour(start_h + n_hours),
                   "tz_offset_hours": spec.tz_offset_hours},
        "patterns": {p: "weekday 09-18 local" if p == "office" else "daily 19-23 local"
                     for p in PATTERNS},
        "planted": {cat: asdict(spec.signal.get(cat, CategorySignal())) for cat in cats},
        "volumes": {cat: _VOLUME[cat] for cat in cats},
        "apps": [{"app_id": a, "category": c, "kind": k} for a, c, k in apps],
        "suppressed_zones": list(indicators.index[suppressed]),
        "files": {k: {"path": v.name, "sha256": file_sha256(v)} for k, v in files.items()},
    }
    write_json(out / "manifest.json", manifest)
    files["manifest"] = out / "manifest.json"
    return Scenario(spec=spec, out_dir=out, files=files, manifest=manifest)


def _write_traffic(path, stations, hours, blocks, rng):
    S, T = len(stations), len(hours)
    minutes = rng.integers(0, 60, (S, T))
    lat = [f"{s.lat:.6f}" for s in stations]
    lon = [f"{s.lon:.6f}" for s in stations]
    stamps = [[(datetime(1970, 1, 1, tzinfo=timezone.utc) + timedelta(hours=int(h), minutes=int(m)))
               .strftime("%Y-%m-%dT%H:%M") for h, m in zip(hours, minutes[s])] for s in range(S)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("timestamp_utc,lat,lon,app_id,uplink_bytes,downlink_bytes\n")
        lines = []
        for t in range(T):
            for s in range(S):
                head = f"{stamps[s][t]},{lat[s]},{lon[s]},"
                for app_id, vol in blocks:
                    v = int(vol[s, t])
                    if v <= 0:
                        continue
                    up = int(v * _UPLINK_FRACTION)
                    lines.append(f"{head}{app_id},{up},{v - up}\n")
            if len(lines) > 200_000:
                fh.writelines(lines)
                lines = []
        fh.writelines(lines)


# -- verification ----------------------------------------------------------------


def oracle_check(manifest_path, run_dir, target="median_income", top=5):
    """Compare a finished pipeline run against the planted truth.

    Returns a dict with mass-conservation residuals, whether planted income
    categories reach the top SHAP features, the R^2 tables and per-stage
    file checksums.
    """
    run = Path(run_dir)
    manifest = read_json(manifest_path)
    out = {"checksums": {}}
    for p in sorted(run.rglob("*")):
        if p.is_file():
            out["checksums"][str(p.relative_to(run))] = file_sha256(p)

    rollup = read_table(run / "ingest" / "rollup.csv")
    zone = read_table(run / "interpolate" / "zone_hourly.csv")
    a = rollup.groupby(["hour_utc", "category"])["total_bytes"].sum().astype(float)
    b = zone.groupby(["hour_utc", "category"])["bytes"].sum().reindex(a.index).fillna(0.0)
    out["mass_residual_max"] = float(((a - b).abs() / a.where(a > 0, 1.0)).max())

    planted = {c for c, s in manifest["planted"].items() if s["volume"] or s["shape"]}
    shap_path = run / "explain" / f"shap_summary_{target}_All.csv"
    if shap_path.exists():
        ranking = read_table(shap_path)
        top_feats = list(ranking.sort_values("rank")["feature"].head(top))
        hit = sorted({f.split(":")[1] for f in top_feats if f.split(":")[1] in planted})
        out["shap_top"] = top_feats
        out["planted_in_top"] = hit
    for name in ("table2.csv", "table3.csv"):
        path = run / "report" / name
        if path.exists():
            out[name] = read_table(path).to_dict(orient="records")
    return out
