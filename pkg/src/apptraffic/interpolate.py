"""Apportion station hourly traffic onto zones with areal weights."""

import numpy as np
import pandas as pd
from scipy import sparse

from .errors import InterpolationError

ZONE_COLUMNS = ["zone_id", "hour_utc", "category", "bytes"]


def interpolate_traffic(rollup, weights):
    """Zone traffic = sum over sites of weight(site, zone) * station traffic.

    ``rollup`` has columns site_id, hour_utc, category, total_bytes. Returns a
    frame with columns zone_id, hour_utc, category, bytes sorted by key; zones
    without overlap contribute no rows. Every rollup site must appear in
    ``weights.site_ids``; a site whose cell misses all zones contributes nothing.
    """
    if rollup.empty:
        return pd.DataFrame({c: pd.Series(dtype=t) for c, t in
                             zip(ZONE_COLUMNS, ["object", "int64", "object", "float64"])})
    site_pos = {s: i for i, s in enumerate(weights.site_ids)}
    sites = rollup["site_id"].to_numpy()
    try:
        rows = np.fromiter((site_pos[s] for s in sites), dtype=np.int64, count=len(sites))
    except KeyError as exc:
        raise InterpolationError(exc.args[0]) from None

    hours, hour_code = np.unique(rollup["hour_utc"].to_numpy(), return_inverse=True)
    cats, cat_code = np.unique(rollup["category"].to_numpy().astype(str), return_inverse=True)
    n_cat = len(cats)
    col = hour_code * n_cat + cat_code
    station = sparse.csr_matrix(
        (rollup["total_bytes"].to_numpy(dtype=np.float64), (rows, col)),
        shape=(len(weights.site_ids), len(hours) * n_cat),
    )
    zone_by_col = (weights.tocsr().T.tocsr() @ station).tocoo()
    z, c, v = zone_by_col.row, zone_by_col.col, zone_by_col.data
    keep = v > 0
    z, c, v = z[keep], c[keep], v[keep]

    zone_ids = np.asarray(weights.zone_ids, dtype=object)
    # zone_ids are sorted, so (zone index, hour code, category code) is key order
    order = np.lexsort((c % n_cat, c // n_cat, z))
    z, c, v = z[order], c[order], v[order]
    return pd.DataFrame({
        "zone_id": zone_ids[z],
        "hour_utc": hours[c // n_cat].astype(np.int64),
        "category": cats[c % n_cat].astype(object),
        "bytes": v,
    })


def station_totals(rollup):
    """Total bytes per (hour, category) over stations."""
    return rollup.groupby(["hour_utc", "category"])["total_bytes"].sum()


def zone_totals(zone_series):
    return zone_series.groupby(["hour_utc", "category"])["bytes"].sum()
