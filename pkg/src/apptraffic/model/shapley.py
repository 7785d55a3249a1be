"""Exact path-dependent Shapley attributions for the boosted ensembles."""

import numpy as np
import pandas as pd
from scipy.stats import rankdata
from sklearn.utils.validation import check_array, check_is_fitted

from ..errors import ModelError
from . import _kernels

TOP_FEATURES = 20


def _scaled_values(model):
    # shrinkage folded into leaf values so attributions sum to the prediction
    return model.trees_["value"] * float(model.learning_rate)


def expected_value(model):
    """Base value: training mean plus the cover-weighted mean of every tree."""
    check_is_fitted(model, "trees_")
    tr = model.trees_
    return model.base_score_ + float(_kernels.expected_value_forest(_scaled_values(model), tr["cover"],
                                                                   tr["feature"]))


def tree_shapley(model, X):
    """Per-row, per-feature attributions and the base value.

    ``base + phi.sum(axis=1)`` equals ``model.predict(X)`` up to rounding.
    """
    check_is_fitted(model, "trees_")
    X = check_array(X, dtype=np.float64)
    if X.shape[1] != model.n_features_in_:
        raise ModelError(f"expected {model.n_features_in_} features, got {X.shape[1]}")
    tr = model.trees_
    phi = _kernels.shap_forest(X, tr["feature"], tr["threshold"], tr["left"], tr["right"],
                               _scaled_values(model), tr["cover"], int(model.max_depth))
    return phi, expected_value(model)


def value_percentiles(X):
    """Column-wise percentile of each value among the rows (ties averaged), 0..100."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if n == 1:
        return np.full_like(X, 50.0)
    return (rankdata(X, method="average", axis=0) - 1.0) / (n - 1) * 100.0


def summarize_attributions(phi, X, feature_names, top=TOP_FEATURES, row_ids=None):
    """Rank features by mean |attribution| (ties by name) and keep the top ones.

    Returns ``(ranking, points)``: ranking has columns rank, feature,
    mean_abs_shap; points has one record per (top feature, row) with the
    attribution and the feature value's percentile, for beeswarm plots.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.ndim != 2 or phi.shape[0] < 1:
        raise ModelError("need at least one attribution row")
    names = [str(f) for f in feature_names]
    if len(names) != phi.shape[1]:
        raise ModelError("feature_names does not match attribution width")
    mean_abs = np.abs(phi).mean(axis=0)
    order = sorted(range(len(names)), key=lambda j: (-mean_abs[j], names[j]))[:top]
    ranking = pd.DataFrame({
        "rank": np.arange(1, len(order) + 1),
        "feature": [names[j] for j in order],
        "mean_abs_shap": mean_abs[order],
    })
    X = np.asarray(X, dtype=float)
    pct = value_percentiles(X[:, order])
    rows = np.arange(phi.shape[0]) if row_ids is None else np.asarray(row_ids)
    points = pd.DataFrame({
        "rank": np.repeat(ranking["rank"].to_numpy(), len(rows)),
        "feature": np.repeat(ranking["feature"].to_numpy(), len(rows)),
        "row": np.tile(rows, len(order)),
        "shap": phi[:, order].T.ravel(),
        "value": X[:, order].T.ravel(),
        "value_percentile": pct.T.ravel(),
    })
    return ranking, points
