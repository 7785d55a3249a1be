"""Gradient-boosted regression trees with squared loss."""

import json

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ..errors import ModelError
from . import _kernels

MAX_BINS = 255


def _bin_features(X, max_bins):
    """Per-feature cut points and uint8 codes; code i means cuts[i-1] < x <= cuts[i].

    Features with at most ``max_bins`` distinct values get midpoint cuts and
    lose nothing; others are cut at quantiles.
    """
    n, p = X.shape
    cuts = np.full((p, max_bins - 1), np.inf)
    codes = np.empty((n, p), dtype=np.uint8)
    for f in range(p):
        col = X[:, f]
        u = np.unique(col)
        if len(u) <= max_bins:
            c = 0.5 * (u[:-1] + u[1:])
            c = np.where(c >= u[1:], u[:-1], c)
        else:
            q = np.quantile(col, np.arange(1, max_bins) / max_bins, method="linear")
            c = np.unique(q)
        cuts[f, : len(c)] = c
        codes[:, f] = np.searchsorted(c, col, side="left")
    return codes, cuts


def _restrict_order(order, rows, n):
    """Per-feature sorted order over the subset ``rows``, renumbered 0..len(rows)-1."""
    mask = np.zeros(n, dtype=bool)
    mask[rows] = True
    rank = np.cumsum(mask) - 1
    o = order[mask[order]].reshape(order.shape[0], len(rows))
    return rank[o].astype(order.dtype)


class GradientBoostedTreesRegressor(RegressorMixin, BaseEstimator):
    """Squared-loss gradient boosting over greedy variance-reduction trees.

    Each round fits a depth-limited tree to the current residuals and adds its
    leaf means scaled by ``learning_rate``. Split search is exact over midpoints
    of sorted unique values; above ``hist_threshold`` training rows features are
    binned to at most 255 quantile bins first.

    Parameters
    ----------
    n_estimators : int, default=300
    max_depth : int, default=6
    learning_rate : float, default=0.1
        Shrinkage in (0, 1].
    min_samples_leaf : int, default=5
    subsample : float, default=1.0
        Fraction of rows, drawn without replacement, that each tree is grown
        on. Below 1 training loss is no longer guaranteed to fall every round.
    hist_threshold : int, default=20000
        Row count above which split finding switches to histograms.
    random_state : int or None
        Seeds the row subsampling; with ``subsample=1`` the fit is deterministic
        regardless.

    Attributes
    ----------
    base_score_ : float
        Training-target mean.
    trees_ : dict of arrays
        ``feature``, ``threshold``, ``left``, ``right``, ``value``, ``cover``,
        each of shape (n_trees, 2**(max_depth+1) - 1).
    train_loss_ : ndarray
        Training MSE before round 1 and after every round.
    """

    def __init__(self, n_estimators=300, max_depth=6, learning_rate=0.1, min_samples_leaf=5,
                 subsample=1.0, hist_threshold=20000, random_state=None):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.min_samples_leaf = min_samples_leaf
        self.subsample = subsample
        self.hist_threshold = hist_threshold
        self.random_state = random_state

    def _check_params(self):
        if not (0 < self.learning_rate <= 1):
            raise ModelError("learning_rate must be in (0, 1]")
        if self.max_depth < 0 or self.n_estimators < 0:
            raise ModelError("max_depth and n_estimators must be >= 0")
        if self.min_samples_leaf < 1:
            raise ModelError("min_samples_leaf must be >= 1")
        if not (0 < self.subsample <= 1):
            raise ModelError("subsample must be in (0, 1]")

    def fit(self, X, y):
        self._check_params()
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        n, p = X.shape
        self.n_features_in_ = p
        self.base_score_ = float(np.mean(y))
        use_hist = n > self.hist_threshold
        self.split_method_ = "hist" if use_hist else "exact"
        if use_hist:
            codes, cuts = _bin_features(X, MAX_BINS)
        else:
            xt = np.ascontiguousarray(X.T)
            index_type = np.int16 if n <= np.iinfo(np.int16).max else np.int32
            order = np.argsort(xt, axis=1, kind="stable").astype(index_type)

        max_nodes = 2 ** (self.max_depth + 1) - 1
        T = self.n_estimators
        feature = np.full((T, max_nodes), -1, dtype=np.int32)
        threshold = np.zeros((T, max_nodes))
        left = np.full((T, max_nodes), -1, dtype=np.int32)
        right = np.full((T, max_nodes), -1, dtype=np.int32)
        value = np.zeros((T, max_nodes))
        cover = np.zeros((T, max_nodes))

        pred = np.full(n, self.base_score_)
        losses = [float(np.mean((y - pred) ** 2))]
        lr = float(self.learning_rate)
        m = min(n, max(int(round(self.subsample * n)), 2 * self.min_samples_leaf))
        rng = np.random.default_rng(self.random_state) if m < n else None
        for t in range(T):
            resid = y - pred
            if rng is None:
                rows = None
            else:
                rows = np.sort(rng.choice(n, m, replace=False))
            if use_hist:
                c = codes if rows is None else codes[rows]
                g = resid if rows is None else resid[rows]
                out = _kernels.grow_tree_hist(c, g, MAX_BINS, self.max_depth, self.min_samples_leaf)
            elif rows is None:
                out = _kernels.grow_tree_exact(order, xt, resid, self.max_depth, self.min_samples_leaf)
            else:
                out = _kernels.grow_tree_exact(_restrict_order(order, rows, n), np.ascontiguousarray(xt[:, rows]),
                                               resid[rows], self.max_depth, self.min_samples_leaf)
            f, thr, lch, rch, val, cov, leaf_of = out
            if use_hist:
                internal = f >= 0
                thr = thr.copy()
                thr[internal] = cuts[f[internal], thr[internal].astype(np.int64)]
            feature[t], threshold[t], left[t], right[t], value[t], cover[t] = f, thr, lch, rch, val, cov
            if rows is None:
                pred = pred + lr * val[leaf_of]
            else:
                pred = pred + _kernels.predict_forest(X, feature[t:t + 1], threshold[t:t + 1], left[t:t + 1],
                                                      right[t:t + 1], value[t:t + 1], lr, 0.0)
            losses.append(float(np.mean((y - pred) ** 2)))
        self.trees_ = dict(feature=feature, threshold=threshold, left=left, right=right,
                           value=value, cover=cover)
        self.train_loss_ = np.array(losses)
        return self

    def predict(self, X):
        check_is_fitted(self, "trees_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ModelError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        tr = self.trees_
        return _kernels.predict_forest(X, tr["feature"], tr["threshold"], tr["left"], tr["right"],
                                       tr["value"], float(self.learning_rate), self.base_score_)

    def apply(self, X):
        check_is_fitted(self, "trees_")
        X = check_array(X, dtype=np.float64)
        tr = self.trees_
        return _kernels.apply_forest(X, tr["feature"], tr["threshold"], tr["left"], tr["right"])

    @property
    def n_trees_(self):
        return self.trees_["feature"].shape[0]

    def staged_train_loss(self):
        return self.train_loss_

    # -- serialization ---------------------------------------------------------

    def to_dict(self, feature_names=None):
        """JSON-ready dump: one node list per tree, leaves carry ``value``."""
        check_is_fitted(self, "trees_")
        tr = self.trees_
        trees = []
        for t in range(self.n_trees_):
            nodes = []
            used = np.flatnonzero(tr["cover"][t] > 0)
            for k in used:
                node = {"id": int(k), "cover": float(tr["cover"][t, k])}
                if tr["feature"][t, k] >= 0:
                    node.update(feature=int(tr["feature"][t, k]),
                                threshold=float(tr["threshold"][t, k]),
                                left=int(tr["left"][t, k]), right=int(tr["right"][t, k]))
                else:
                    node["value"] = float(tr["value"][t, k])
                nodes.append(node)
            trees.append(nodes)
        return {
            "kind": "gbdt",
            "params": self.get_params(),
            "base_score": self.base_score_,
            "learning_rate": float(self.learning_rate),
            "n_features": self.n_features_in_,
            "feature_names": list(feature_names) if feature_names is not None else None,
            "trees": trees,
        }

    @classmethod
    def from_dict(cls, doc):
        model = cls(**doc["params"])
        model.n_features_in_ = doc["n_features"]
        model.base_score_ = doc["base_score"]
        max_nodes = 2 ** (model.max_depth + 1) - 1
        T = len(doc["trees"])
        arr = dict(feature=np.full((T, max_nodes), -1, dtype=np.int32),
                   threshold=np.zeros((T, max_nodes)),
                   left=np.full((T, max_nodes), -1, dtype=np.int32),
                   right=np.full((T, max_nodes), -1, dtype=np.int32),
                   value=np.zeros((T, max_nodes)), cover=np.zeros((T, max_nodes)))
        for t, nodes in enumerate(doc["trees"]):
            for node in nodes:
                k = node["id"]
                arr["cover"][t, k] = node["cover"]
                if "feature" in node:
                    arr["feature"][t, k] = node["feature"]
                    arr["threshold"][t, k] = node["threshold"]
                    arr["left"][t, k] = node["left"]
                    arr["right"][t, k] = node["right"]
                else:
                    arr["value"][t, k] = node["value"]
        model.trees_ = arr
        model.train_loss_ = np.array([])
        return model

    def dumps(self, feature_names=None):
        return json.dumps(self.to_dict(feature_names), separators=(",", ":"))
