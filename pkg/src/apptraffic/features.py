"""Per-zone traffic features: typical week signature (TWS), RCA and SCU indices.

The zone dataset is read into a dense cube (zone, category, hour) over the
observation window, with absent hours as zero traffic. TWS medians are taken
per (day of week, hour) over the local calendar days fully inside the window.
"""

import logging
import warnings
from dataclasses import dataclass, field
from datetime import date, timedelta

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import FeatureError

log = logging.getLogger(__name__)

HOURS_PER_WEEK = 168
SELECTORS = ("Cumulative", "RCA", "TWS", "All")
DEGENERATE_REL = 1e-12
_EPOCH_DATE = date(1970, 1, 1)


def hour_of_week(ts):
    """1 for Monday 00:xx through 168 for Sunday 23:xx."""
    return 24 * ts.weekday() + ts.hour + 1


def tws_column(category, how):
    return f"TWS:{category}:{how}"


def _is_degenerate(mu, sigma):
    return sigma <= DEGENERATE_REL * np.maximum(np.abs(mu), np.finfo(float).tiny)


@dataclass
class WeekSignature:
    values: np.ndarray
    degenerate: bool = False


def raw_signature(hourly, calendar):
    """Median traffic per hour-of-week slot.

    ``hourly`` maps local-time hour starts (datetime) to bytes; hours not present
    count as zero. ``calendar`` lists the observed local days. Slot (day, hour)
    is the median over all calendar days with that weekday.
    """
    days = sorted(set(calendar))
    if len(days) < 7 or len({d.weekday() for d in days}) < 7:
        raise FeatureError("observation window must cover every day of the week")
    grid = np.zeros((len(days), 24))
    pos = {d: i for i, d in enumerate(days)}
    items = hourly.items() if hasattr(hourly, "items") else hourly
    for ts, v in items:
        i = pos.get(ts.date())
        if i is not None:
            grid[i, ts.hour] += v
    weekday = np.array([d.weekday() for d in days])
    return _weekday_medians(grid[None, None], weekday)[0, 0]


def _weekday_medians(cube, weekday):
    """cube (..., n_days, 24) -> (..., 168)."""
    out = np.empty(cube.shape[:-2] + (HOURS_PER_WEEK,))
    for d in range(7):
        sel = weekday == d
        out[..., 24 * d: 24 * (d + 1)] = np.median(cube[..., sel, :], axis=-2)
    return out


def standardize_signature(raw):
    raw = np.asarray(raw, dtype=float)
    if raw.shape != (HOURS_PER_WEEK,):
        raise FeatureError(f"signature must have length {HOURS_PER_WEEK}, got {raw.shape}")
    values, degenerate = standardize_blocks(raw[None, :])
    return WeekSignature(values[0], bool(degenerate[0]))


def standardize_blocks(raw):
    """Z-score each row of ``raw`` (population std); flat rows become zeros."""
    mu = raw.mean(axis=-1, keepdims=True)
    sigma = raw.std(axis=-1, keepdims=True)
    degenerate = _is_degenerate(mu, sigma)[..., 0]
    safe = np.where(degenerate[..., None], 1.0, sigma)
    out = np.where(degenerate[..., None], 0.0, (raw - mu) / safe)
    return out, degenerate


class WeekSignatureTransformer(TransformerMixin, BaseEstimator):
    """Standardize raw week signatures laid out as consecutive 168-column blocks.

    Stateless: each (row, block) is normalized by its own mean and population
    standard deviation. ``degenerate_`` holds the (rows, blocks) mask of flat
    blocks from the last ``transform`` call.
    """

    def fit(self, X, y=None):
        X = check_array(X)
        if X.shape[1] % HOURS_PER_WEEK:
            raise FeatureError("column count must be a multiple of 168")
        self.n_features_in_ = X.shape[1]
        self.n_blocks_ = X.shape[1] // HOURS_PER_WEEK
        return self

    def transform(self, X):
        check_is_fitted(self, "n_blocks_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise FeatureError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        blocks = X.reshape(len(X), self.n_blocks_, HOURS_PER_WEEK)
        out, self.degenerate_ = standardize_blocks(blocks)
        return out.reshape(X.shape)


class RCATransformer(TransformerMixin, BaseEstimator):
    """Revealed comparative advantage of each category within each zone.

    ``fit`` learns global category shares T_a / T over the fitted zones;
    ``transform`` divides each zone's category share by them. Zones with no
    traffic transform to NaN rows; categories with zero global traffic are
    dropped (``dropped_mask_``).
    """

    def fit(self, X, y=None):
        X = check_array(X)
        if np.any(X < 0):
            raise FeatureError("traffic must be non-negative")
        total = X.sum()
        if not total > 0:
            raise FeatureError("total traffic is zero; RCA undefined")
        cat_total = X.sum(axis=0)
        self.n_features_in_ = X.shape[1]
        self.dropped_mask_ = cat_total <= 0
        self.category_share_ = cat_total[~self.dropped_mask_] / total
        self.grand_total_ = total
        return self

    def transform(self, X):
        check_is_fitted(self, "category_share_")
        X = check_array(X)[:, ~self.dropped_mask_]
        zone_total = X.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return (X / zone_total) / self.category_share_


class SCUTransformer(TransformerMixin, BaseEstimator):
    """Per-category z-score of cumulative traffic across zones."""

    def fit(self, X, y=None):
        X = check_array(X)
        if len(X) < 2:
            raise FeatureError("SCU needs at least 2 zones")
        self.n_features_in_ = X.shape[1]
        self.mean_ = X.mean(axis=0)
        std = X.std(axis=0)
        self.degenerate_ = _is_degenerate(self.mean_, std)
        self.scale_ = np.where(self.degenerate_, 1.0, std)
        return self

    def transform(self, X):
        check_is_fitted(self, "scale_")
        X = check_array(X)
        out = (X - self.mean_) / self.scale_
        out[:, self.degenerate_] = 0.0
        return out


@dataclass
class RcaMatrix:
    values: pd.DataFrame
    traffic: pd.DataFrame
    zone_totals: pd.Series
    category_totals: pd.Series
    grand_total: float
    dropped: list = field(default_factory=list)


@dataclass
class ScuMatrix:
    values: pd.DataFrame
    cumulative: pd.DataFrame
    degenerate: list = field(default_factory=list)


def rca(traffic):
    """RCA for a zones x categories frame of (median hourly) traffic.

    Zones with zero total traffic get no row; zero-traffic categories are
    dropped with a warning.
    """
    traffic = traffic.astype(float)
    # zero rows are excluded up front: they have no share to compare
    active = traffic[traffic.sum(axis=1) > 0]
    if active.empty:
        raise FeatureError("total traffic is zero; RCA undefined")
    tr = RCATransformer().fit(active.to_numpy())
    dropped = list(active.columns[tr.dropped_mask_])
    if dropped:
        warnings.warn(f"RCA columns dropped for zero-traffic categories: {dropped}", stacklevel=2)
    kept = active.loc[:, ~tr.dropped_mask_]
    values = pd.DataFrame(tr.transform(active.to_numpy()), index=active.index, columns=kept.columns)
    return RcaMatrix(
        values=values,
        traffic=active,
        zone_totals=active.sum(axis=1),
        category_totals=active.sum(axis=0),
        grand_total=float(tr.grand_total_),
        dropped=dropped,
    )


def scu(cumulative):
    cumulative = cumulative.astype(float)
    tr = SCUTransformer().fit(cumulative.to_numpy())
    values = pd.DataFrame(tr.transform(cumulative.to_numpy()),
                          index=cumulative.index, columns=cumulative.columns)
    degenerate = list(cumulative.columns[tr.degenerate_])
    return ScuMatrix(values=values, cumulative=cumulative, degenerate=degenerate)


# -- zone dataset to features --------------------------------------------------


def local_calendar(window_start_h, window_end_h, tz_offset_hours=0):
    """Local days wholly inside [start, end) UTC hours, plus the first local
    day index (days since 1970-01-01)."""
    lo = window_start_h + tz_offset_hours
    hi = window_end_h + tz_offset_hours
    first = -(-lo // 24)
    last = hi // 24
    days = [_EPOCH_DATE + timedelta(days=int(d)) for d in range(first, last)]
    return days, first


def zone_cube(zone_series, window_start_h, window_end_h, zones=None, categories=None):
    """Dense (zone, category, hour) array over the UTC window."""
    df = zone_series
    df = df[(df["hour_utc"] >= window_start_h) & (df["hour_utc"] < window_end_h)]
    if zones is None:
        zones = sorted(df["zone_id"].unique())
    if categories is None:
        categories = sorted(df["category"].unique())
    zpos = pd.Index(zones)
    cpos = pd.Index(categories)
    zi = zpos.get_indexer(df["zone_id"])
    ci = cpos.get_indexer(df["category"])
    keep = (zi >= 0) & (ci >= 0)
    cube = np.zeros((len(zones), len(categories), window_end_h - window_start_h))
    np.add.at(cube, (zi[keep], ci[keep], df["hour_utc"].to_numpy()[keep] - window_start_h),
              df["bytes"].to_numpy()[keep])
    return cube, list(zones), list(categories)


def cube_signatures(cube, window_start_h, window_end_h, tz_offset_hours=0):
    """Raw 168-slot median signatures for every (zone, category) of ``cube``."""
    days, first = local_calendar(window_start_h, window_end_h, tz_offset_hours)
    if len(days) < 7:
        raise FeatureError("observation window shorter than 7 local days")
    start = first * 24 - (window_start_h + tz_offset_hours)
    local = cube[:, :, start: start + 24 * len(days)]
    local = local.reshape(cube.shape[0], cube.shape[1], len(days), 24)
    weekday = np.array([d.weekday() for d in days])
    if len(set(weekday.tolist())) < 7:
        raise FeatureError("observation window must cover every day of the week")
    return _weekday_medians(local, weekday)


@dataclass
class FeatureSet:
    zones: list
    categories: list
    tws: pd.DataFrame
    tws_degenerate: pd.DataFrame
    rca: RcaMatrix
    scu: ScuMatrix
    median_hourly: pd.DataFrame
    cumulative: pd.DataFrame

    def assemble(self, selector="All"):
        return assemble(selector, self.tws, self.rca, self.scu)


def compute_features(zone_series, window_start_h, window_end_h, tz_offset_hours=0,
                     categories=None, population=None):
    """All three feature families for zones with traffic in the window.

    ``population`` (zone id -> residents) switches RCA to per-capita traffic.
    """
    cube, zones, cats = zone_cube(zone_series, window_start_h, window_end_h, categories=categories)
    active = cube.sum(axis=(1, 2)) > 0
    cube = cube[active]
    zones = [z for z, a in zip(zones, active) if a]
    if not zones:
        raise FeatureError("no zone has traffic inside the observation window")

    raw = cube_signatures(cube, window_start_h, window_end_h, tz_offset_hours)
    std, degenerate = standardize_blocks(raw)
    tws = pd.DataFrame(
        std.reshape(len(zones), -1),
        index=pd.Index(zones, name="zone_id"),
        columns=[tws_column(c, h) for c in cats for h in range(1, HOURS_PER_WEEK + 1)],
    )
    tws_deg = pd.DataFrame(degenerate, index=tws.index, columns=cats)

    median_hourly = pd.DataFrame(np.median(cube, axis=2), index=tws.index, columns=cats)
    cumulative = pd.DataFrame(cube.sum(axis=2), index=tws.index, columns=cats)

    t = median_hourly
    if population is not None:
        pop = pd.Series(population, dtype=float).reindex(t.index)
        ok = pop > 0
        if not ok.all():
            log.warning("per-capita RCA: %d zones without population dropped", int((~ok).sum()))
        t = t[ok].div(pop[ok], axis=0)
    return FeatureSet(
        zones=zones,
        categories=cats,
        tws=tws,
        tws_degenerate=tws_deg,
        rca=rca(t),
        scu=scu(cumulative),
        median_hourly=median_hourly,
        cumulative=cumulative,
    )


def assemble(selector, tws, rca_matrix, scu_matrix):
    """Feature matrix for ``selector`` over the zones common to all inputs."""
    if selector not in SELECTORS:
        raise FeatureError(f"unknown selector {selector!r}; expected one of {SELECTORS}")
    rca_df = rca_matrix.values.rename(columns=lambda c: f"RCA:{c}")
    scu_df = scu_matrix.values.rename(columns=lambda c: f"SCU:{c}")
    common = tws.index.intersection(rca_df.index).intersection(scu_df.index)
    dropped = len(tws.index.union(rca_df.index).union(scu_df.index)) - len(common)
    if dropped:
        log.info("assemble: %d zones not present in every feature family", dropped)
    if common.empty:
        raise FeatureError("no zone is present in every feature family")
    common = common.sort_values()
    blocks = {
        "Cumulative": [scu_df],
        "RCA": [rca_df],
        "TWS": [tws],
        "All": [tws, rca_df, scu_df],
    }[selector]
    out = pd.concat([b.loc[common] for b in blocks], axis=1)
    out.index.name = "zone_id"
    return out


def select_columns(frame, selector):
    """Columns of a full feature frame belonging to ``selector``."""
    prefix = {"Cumulative": ("SCU:",), "RCA": ("RCA:",), "TWS": ("TWS:",),
              "All": ("TWS:", "RCA:", "SCU:")}
    if selector not in prefix:
        raise FeatureError(f"unknown selector {selector!r}")
    return frame.loc[:, [c for c in frame.columns if c.startswith(prefix[selector])]]
