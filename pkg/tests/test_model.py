import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from apptraffic.errors import ConfigError, ModelError
from apptraffic.model import (GradientBoostedTreesRegressor, LinearRegressor, RidgeRegressor, evaluate,
                              expected_value, kfold, make_estimator, r_squared, split,
                              summarize_attributions, tree_shapley)
from apptraffic.model.shapley import value_percentiles


def data(seed=0, n=200, p=5, noise=0.1):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    y = X[:, 0] * 2 - X[:, 1] + 0.5 * X[:, 2] * X[:, -1] + noise * rng.normal(size=n)
    return X, y


# -- linear ----------------------------------------------------------------------


def test_ridge_zero_matches_normal_equations():
    X, y = data(1, n=60, p=6)
    m = RidgeRegressor(alpha=0).fit(X, y)
    A = np.column_stack([np.ones(len(X)), X])
    beta = np.linalg.solve(A.T @ A, A.T @ y)
    np.testing.assert_allclose(m.coef_, beta[1:], atol=1e-8)
    assert m.intercept_ == pytest.approx(beta[0], abs=1e-8)
    np.testing.assert_allclose(LinearRegressor().fit(X, y).coef_, m.coef_, atol=1e-12)


def test_ridge_matches_standardized_closed_form():
    X, y = data(2, n=50, p=4)
    alpha = 3.0
    Z = (X - X.mean(0)) / X.std(0)
    beta = np.linalg.solve(Z.T @ Z + alpha * np.eye(4), Z.T @ (y - y.mean()))
    m = RidgeRegressor(alpha).fit(X, y)
    np.testing.assert_allclose(m.standardized_coef_, beta, atol=1e-10)


def test_ridge_primal_and_dual_agree():
    rng = np.random.default_rng(3)
    X, y = rng.normal(size=(12, 30)), rng.normal(size=12)
    wide = RidgeRegressor(2.0).fit(X, y)
    Z = (X - X.mean(0)) / X.std(0)
    beta = np.linalg.solve(Z.T @ Z + 2.0 * np.eye(30), Z.T @ (y - y.mean()))
    np.testing.assert_allclose(wide.standardized_coef_, beta, atol=1e-9)


@given(st.lists(st.floats(0, 100), min_size=2, max_size=6, unique=True))
def test_ridge_shrinks_with_alpha(alphas):
    X, y = data(4, n=40, p=5)
    norms = [np.linalg.norm(RidgeRegressor(a).fit(X, y).standardized_coef_) for a in sorted(alphas)]
    assert all(b <= a + 1e-9 for a, b in zip(norms, norms[1:]))


def test_ridge_constant_column_and_errors():
    X, y = data(5, n=30, p=3)
    X[:, 1] = 4.0
    m = RidgeRegressor(1.0).fit(X, y)
    assert m.coef_[1] == 0.0
    with pytest.raises(ModelError):
        RidgeRegressor(-1).fit(X, y)
    with pytest.raises(ModelError):
        m.predict(X[:, :2])


# -- boosting --------------------------------------------------------------------


def test_gbdt_train_loss_monotone():
    X, y = data(6)
    m = GradientBoostedTreesRegressor(n_estimators=60, max_depth=4, learning_rate=0.2).fit(X, y)
    loss = m.train_loss_
    assert len(loss) == 61 and np.all(np.diff(loss) <= 1e-12)


def test_gbdt_recovers_linear_and_constant():
    rng = np.random.default_rng(7)
    x = rng.uniform(0, 1, (300, 1))
    m = GradientBoostedTreesRegressor(n_estimators=200, learning_rate=0.3).fit(x, 3 * x[:, 0])
    assert r_squared(3 * x[:, 0], m.predict(x)) > 0.999
    c = GradientBoostedTreesRegressor(n_estimators=5).fit(x, np.full(300, 2.5))
    np.testing.assert_allclose(c.predict(x), 2.5)
    assert (c.trees_["feature"] < 0).all()


def test_gbdt_split_ties_take_lowest_feature():
    X = np.tile(np.arange(20.0)[:, None], (1, 3))
    y = (X[:, 0] > 9).astype(float)
    m = GradientBoostedTreesRegressor(n_estimators=1, max_depth=1, min_samples_leaf=1,
                                      learning_rate=1.0).fit(X, y)
    assert m.trees_["feature"][0, 0] == 0
    assert m.trees_["threshold"][0, 0] == 9.5


def test_gbdt_min_leaf_respected():
    X, y = data(8, n=100)
    m = GradientBoostedTreesRegressor(n_estimators=10, max_depth=5, min_samples_leaf=17).fit(X, y)
    leaves = m.trees_["cover"][m.trees_["feature"] < 0]
    assert leaves[leaves > 0].min() >= 17


def test_hist_matches_exact():
    # reference instance: uniform features, additive smooth target
    rng = np.random.default_rng(0)
    X = rng.uniform(size=(30000, 6))
    y = 2 * X[:, 0] - X[:, 1] + np.sin(6 * X[:, 2]) + 0.5 * rng.normal(size=30000)
    tr, te = slice(0, 20000), slice(20000, None)
    exact = GradientBoostedTreesRegressor(n_estimators=100, max_depth=3).fit(X[tr], y[tr])
    hist = GradientBoostedTreesRegressor(n_estimators=100, max_depth=3, hist_threshold=100).fit(X[tr], y[tr])
    assert exact.split_method_ == "exact" and hist.split_method_ == "hist"
    assert abs(r_squared(y[te], exact.predict(X[te])) - r_squared(y[te], hist.predict(X[te]))) <= 1e-3


def test_hist_is_lossless_for_few_values():
    rng = np.random.default_rng(11)
    X = rng.integers(0, 30, (500, 3)).astype(float)
    y = X[:, 0] + rng.normal(size=500)
    a = GradientBoostedTreesRegressor(n_estimators=20).fit(X, y)
    b = GradientBoostedTreesRegressor(n_estimators=20, hist_threshold=10).fit(X, y)
    np.testing.assert_allclose(a.predict(X), b.predict(X), atol=1e-9)


def test_subsample_is_seeded():
    X, y = data(12)
    kw = dict(n_estimators=20, subsample=0.5, max_depth=3)
    a = GradientBoostedTreesRegressor(random_state=1, **kw).fit(X, y)
    b = GradientBoostedTreesRegressor(random_state=1, **kw).fit(X, y)
    c = GradientBoostedTreesRegressor(random_state=2, **kw).fit(X, y)
    np.testing.assert_array_equal(a.predict(X), b.predict(X))
    assert not np.array_equal(a.predict(X), c.predict(X))
    assert a.trees_["cover"][:, 0].max() == 100


def test_gbdt_serialization_round_trip():
    X, y = data(13)
    m = GradientBoostedTreesRegressor(n_estimators=15, max_depth=3).fit(X, y)
    doc = m.to_dict([f"f{i}" for i in range(5)])
    back = GradientBoostedTreesRegressor.from_dict(doc)
    np.testing.assert_array_equal(back.predict(X), m.predict(X))
    assert doc["feature_names"][0] == "f0" and doc["learning_rate"] == 0.1


def test_gbdt_params_and_validation():
    m = GradientBoostedTreesRegressor(n_estimators=7)
    assert clone(m).get_params()["n_estimators"] == 7
    with pytest.raises(ModelError):
        GradientBoostedTreesRegressor(learning_rate=0).fit(*data(0, n=20))
    with pytest.raises(ModelError):
        GradientBoostedTreesRegressor(subsample=1.5).fit(*data(0, n=20))
    assert isinstance(make_estimator("ridge", {"alpha": 2}), RidgeRegressor)
    assert make_estimator("gbdt", seed=4).random_state == 4
    with pytest.raises(ConfigError):
        make_estimator("forest")


# -- shapley ---------------------------------------------------------------------


def _cond_value(model, x, subset):
    """Path-dependent conditional expectation of the ensemble given features in ``subset``."""
    tr = model.trees_
    lr = model.learning_rate
    total = 0.0
    for t in range(tr["feature"].shape[0]):
        def walk(k):
            f = tr["feature"][t, k]
            if f < 0:
                return tr["value"][t, k] * lr
            lch, rch = tr["left"][t, k], tr["right"][t, k]
            if f in subset:
                return walk(lch if x[f] <= tr["threshold"][t, k] else rch)
            cl, cr = tr["cover"][t, lch], tr["cover"][t, rch]
            return (cl * walk(lch) + cr * walk(rch)) / (cl + cr)
        total += walk(0)
    return total + model.base_score_


def brute_force_shapley(model, x):
    M = len(x)
    phi = np.zeros(M)
    cache = {}

    def v(s):
        if s not in cache:
            cache[s] = _cond_value(model, x, s)
        return cache[s]

    for i in range(M):
        others = [j for j in range(M) if j != i]
        for size in range(M):
            w = math.factorial(size) * math.factorial(M - size - 1) / math.factorial(M)
            for s in itertools.combinations(others, size):
                s = frozenset(s)
                phi[i] += w * (v(s | {i}) - v(s))
    return phi, v(frozenset())


def test_tree_shapley_matches_exhaustive_coalitions():
    X, y = data(14, n=120, p=10)
    m = GradientBoostedTreesRegressor(n_estimators=6, max_depth=3, min_samples_leaf=3).fit(X, y)
    phi, base = tree_shapley(m, X[:4])
    for r in range(4):
        exact, v0 = brute_force_shapley(m, X[r])
        np.testing.assert_allclose(phi[r], exact, atol=1e-9)
        assert base == pytest.approx(v0, abs=1e-9)


def test_local_accuracy_and_summary():
    X, y = data(15, n=150, p=6)
    m = GradientBoostedTreesRegressor(n_estimators=40, max_depth=4).fit(X, y)
    phi, base = tree_shapley(m, X)
    np.testing.assert_allclose(base + phi.sum(axis=1), m.predict(X), atol=1e-6)
    assert base == pytest.approx(expected_value(m))
    names = [f"f{i}" for i in range(6)]
    ranking, points = summarize_attributions(phi, X, names, top=3)
    assert list(ranking["rank"]) == [1, 2, 3]
    assert ranking["mean_abs_shap"].is_monotonic_decreasing
    assert ranking["feature"].iloc[0] == "f0"
    assert len(points) == 3 * 150 and points["value_percentile"].between(0, 100).all()


def test_summary_ties_by_name_and_percentiles():
    phi = np.array([[1.0, -1.0, 0.0], [1.0, 1.0, 0.0]])
    ranking, _ = summarize_attributions(phi, np.zeros((2, 3)), ["b", "a", "c"])
    assert list(ranking["feature"]) == ["a", "b", "c"]
    np.testing.assert_array_equal(value_percentiles(np.array([[3.0], [1.0], [2.0]]))[:, 0], [100, 0, 50])


# -- evaluation ------------------------------------------------------------------


@given(st.integers(10, 300), st.integers(0, 1000))
def test_split_partitions_rows(n, seed):
    train, test = split(n, 0.8, seed)
    assert len(train) == math.floor(0.8 * n + 1e-9)
    assert sorted(np.concatenate([train, test])) == list(range(n))
    again = split(n, 0.8, seed)
    assert np.array_equal(train, again[0])


@given(st.integers(5, 200), st.integers(2, 5), st.integers(0, 1000))
def test_kfold_disjoint_cover(n, k, seed):
    folds = kfold(np.arange(n) * 3, k, seed)
    sizes = [len(f) for f in folds]
    assert max(sizes) - min(sizes) <= 1 and sizes == sorted(sizes, reverse=True)
    allrows = np.concatenate(folds)
    assert sorted(allrows) == list(np.arange(n) * 3)


def test_split_and_r2_errors():
    with pytest.raises(ModelError):
        split(5)
    with pytest.raises(ModelError):
        r_squared([1.0, 1.0], [1.0, 2.0])
    assert r_squared([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 1.0
    assert r_squared([1.0, 2.0, 3.0], [2.0, 2.0, 2.0]) == 0.0


def test_evaluate_drops_missing_targets_and_uses_executor():
    from concurrent.futures import ThreadPoolExecutor

    X, y = data(16, n=80)
    y[[3, 10]] = np.nan
    est = GradientBoostedTreesRegressor(n_estimators=20, max_depth=3)
    rep, model, train, test = evaluate(est, X, y, seed=2)
    assert 3 not in train and 3 not in test and len(train) + len(test) == 78
    assert len(rep.cv_r2) == 5 and rep.test_r2 > 0.5
    with ThreadPoolExecutor(2) as ex:
        rep2, *_ = evaluate(est, X, y, seed=2, executor=ex)
    assert rep2.cv_r2 == rep.cv_r2 and rep2.test_r2 == rep.test_r2
    rows = rep.score_rows()
    assert [r["split"] for r in rows] == ["cv0", "cv1", "cv2", "cv3", "cv4", "train", "test"]
