"""Exploratory disparity analysis: income classes, class means, indicator correlations."""

import logging
import math

import numpy as np
import pandas as pd

from .errors import AnalysisError, ConfigError

log = logging.getLogger(__name__)

Z_95 = 1.96
CLASS_LABELS_3 = ("Low", "Medium", "High")

INDICATORS = (
    "poverty", "median_income", "gini",
    "total_pop", "pop_0_14", "pop_15_29", "pop_30_44", "pop_45_59", "pop_60_74", "pop_75p",
    "immigrants", "cs1", "cs2", "cs3", "cs4", "cs5", "cs6", "cs7", "cs8", "male", "female",
    "no_diploma", "bepc_capbep", "bac", "sup",
)
CENSUS_COLUMNS = ("total_pop", "pop_0_14", "pop_15_29", "pop_30_44", "pop_45_59", "pop_60_74", "pop_75p")


def read_indicators(path):
    from .io import read_table

    df = read_table(path, dtype={"zone_id": str})
    if "zone_id" not in df.columns:
        raise AnalysisError(f"{path}: first column must be zone_id")
    df = df.set_index("zone_id")
    check_indicators(df)
    return df


def check_indicators(df):
    """Domain checks on the columns that are present; missing cells are allowed."""
    def bad(col, mask):
        if mask.any():
            raise AnalysisError(f"indicator {col} out of range for zones {list(df.index[mask][:5])}")

    if "gini" in df:
        bad("gini", (df["gini"] < 0) | (df["gini"] > 1))
    if "poverty" in df:
        bad("poverty", (df["poverty"] < 0) | (df["poverty"] > 100))
    for col in INDICATORS[3:]:
        if col in df:
            bad(col, df[col] < 0)


def class_labels(k):
    return CLASS_LABELS_3 if k == 3 else tuple(f"Q{i + 1}" for i in range(k))


def quantile_classes(values, k=3):
    """Equal-count classes over ascending value; ties ordered by zone id.

    With n % k leftover zones, the lowest classes each take one extra.
    """
    if k < 2:
        raise ConfigError("need at least 2 classes", "analysis.classes")
    values = pd.Series(values).dropna()
    n = len(values)
    if n < k:
        raise AnalysisError(f"{n} zones cannot form {k} classes")
    frame = pd.DataFrame({"zone": values.index.astype(str), "v": values.to_numpy()})
    frame = frame.sort_values(["v", "zone"], kind="mergesort")
    base, extra = divmod(n, k)
    sizes = [base + (1 if i < extra else 0) for i in range(k)]
    labels = np.repeat(np.array(class_labels(k), dtype=object), sizes)
    out = pd.Series(labels, index=frame["zone"].to_numpy(), name="class")
    out.index.name = "zone_id"
    return out.reindex(values.index.astype(str))


def _mean_ci(block):
    n = len(block)
    mean = block.mean(axis=0)
    if n < 2:
        return mean, np.zeros_like(mean)
    s = block.std(axis=0, ddof=1)
    return mean, Z_95 * s / math.sqrt(n)


def _classes_in_order(labels):
    present = set(labels.dropna())
    if present <= set(CLASS_LABELS_3):
        return [c for c in CLASS_LABELS_3 if c in present]
    return sorted(present, key=lambda c: (len(str(c)), str(c)))


def class_mean_signature(labels, signatures):
    """Per-class element-wise mean and 95% CI half-width of zone signatures.

    ``signatures``: zones x 168 frame. Returns rows (class, x, mean, ci), x =
    hour of week 1..168.
    """
    return _class_means(labels, signatures, "x", lambda cols: np.arange(1, len(cols) + 1))


def class_mean_index(labels, matrix):
    """Per (class, category) mean and 95% CI half-width of an index matrix."""
    return _class_means(labels, matrix, "category", lambda cols: list(cols))


def _class_means(labels, frame, key, xs):
    labels = pd.Series(labels)
    common = frame.index.intersection(labels.dropna().index)
    frame = frame.loc[common]
    labels = labels.loc[common]
    classes = _classes_in_order(labels)
    rows = []
    x = xs(frame.columns)
    for c in classes:
        block = frame.loc[labels == c].to_numpy(dtype=float)
        if len(block) == 0:
            raise AnalysisError(f"class {c!r} is empty")
        mean, ci = _mean_ci(block)
        rows.append(pd.DataFrame({"class": c, key: x, "mean": mean, "ci": ci}))
    return pd.concat(rows, ignore_index=True)


def pearson(x, y):
    """Two-pass Pearson r over complete pairs; NaN when undefined."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = ~(np.isnan(x) | np.isnan(y))
    x, y = x[ok], y[ok]
    if len(x) < 3:
        return float("nan")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = np.dot(dx, dx)
    syy = np.dot(dy, dy)
    if sxx == 0 or syy == 0:
        return float("nan")
    return float(np.dot(dx, dy) / math.sqrt(sxx * syy))


def correlation_matrix(table):
    cols = list(table.columns)
    data = table.to_numpy(dtype=float)
    n = len(cols)
    r = np.full((n, n), np.nan)
    constant = []
    for i in range(n):
        col = data[:, i]
        col = col[~np.isnan(col)]
        if len(col) < 2 or np.all(col == col[0]):
            constant.append(cols[i])
            continue
        r[i, i] = 1.0
        for j in range(i + 1, n):
            r[i, j] = r[j, i] = pearson(data[:, i], data[:, j])
    if constant:
        log.warning("zero-variance indicators nulled in correlation: %s", constant)
    return pd.DataFrame(r, index=cols, columns=cols)


def masked_correlation(table, threshold=0.5):
    """Pearson matrix (pairwise deletion) with |r| < threshold set to NaN."""
    r = correlation_matrix(table)
    return r.mask(r.abs() < threshold)


def correlation_long(matrix):
    rows = []
    for a in matrix.index:
        for b in matrix.columns:
            v = matrix.loc[a, b]
            rows.append((a, b, None if pd.isna(v) else float(v)))
    return pd.DataFrame(rows, columns=["row", "column", "r"])
