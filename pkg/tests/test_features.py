from datetime import date, datetime, timedelta

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from apptraffic import features
from apptraffic.errors import FeatureError
from apptraffic.features import RCATransformer, SCUTransformer, WeekSignatureTransformer


def test_hour_of_week_corners():
    assert features.hour_of_week(datetime(2019, 3, 18, 0, 30)) == 1    # Monday
    assert features.hour_of_week(datetime(2019, 3, 24, 23, 59)) == 168  # Sunday
    assert features.hour_of_week(datetime(2019, 3, 20, 13, 0)) == 24 * 2 + 14


def naive_signature(hourly, days):
    out = []
    for slot in range(168):
        wd, h = divmod(slot, 24)
        vals = [hourly.get(datetime(d.year, d.month, d.day, h), 0.0) for d in days if d.weekday() == wd]
        out.append(float(np.median(vals)))
    return np.array(out)


@pytest.mark.parametrize("seed", range(5))
def test_raw_signature_matches_naive(seed):
    rng = np.random.default_rng(seed)
    days = [date(2019, 3, 16) + timedelta(days=i) for i in range(int(rng.integers(7, 22)))]
    hourly = {}
    for d in days:
        for h in range(24):
            if rng.random() < 0.7:
                hourly[datetime(d.year, d.month, d.day, h)] = float(rng.integers(0, 1000))
    np.testing.assert_array_equal(features.raw_signature(hourly, days), naive_signature(hourly, days))


def test_raw_signature_needs_every_weekday():
    days = [date(2019, 3, 18) + timedelta(days=i) for i in range(6)]
    with pytest.raises(FeatureError):
        features.raw_signature({}, days)


positive = arrays(np.float64, 168, elements=st.floats(0, 1e9))


@given(positive, st.floats(1e-3, 1e3))
def test_signature_identities_and_scale_invariance(raw, k):
    sig = features.standardize_signature(raw)
    if sig.degenerate:
        assert np.all(sig.values == 0)
        return
    assert abs(sig.values.mean()) < 1e-9
    assert abs(sig.values.std() - 1) < 1e-9
    scaled = features.standardize_signature(raw * k)
    if not scaled.degenerate:
        np.testing.assert_allclose(scaled.values, sig.values, atol=1e-9)


def test_constant_signature_is_degenerate():
    sig = features.standardize_signature(np.full(168, 7.0))
    assert sig.degenerate and not sig.values.any()
    with pytest.raises(FeatureError):
        features.standardize_signature(np.ones(10))


@given(arrays(np.float64, (6, 4), elements=st.floats(0, 1e6)))
def test_rca_weighted_mean_is_one(traffic):
    df = pd.DataFrame(traffic, columns=list("abcd"))
    if not (df.sum(axis=1) > 0).any():
        with pytest.raises(FeatureError):
            features.rca(df)
        return
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        m = features.rca(df)
    share = m.zone_totals / m.grand_total
    for c in m.values.columns:
        assert float((m.values[c] * share).sum()) == pytest.approx(1.0, abs=1e-9)


def test_rca_oracle_and_zero_category():
    df = pd.DataFrame({"a": [2.0, 1.0, 0.0], "b": [2.0, 3.0, 0.0], "c": [0.0, 0.0, 0.0]}, index=list("xyz"))
    with pytest.warns(UserWarning):
        m = features.rca(df)
    assert list(m.values.columns) == ["a", "b"] and list(m.values.index) == ["x", "y"]
    # (2/4) / (3/8)
    assert m.values.loc["x", "a"] == pytest.approx((2 / 4) / (3 / 8), rel=1e-15)


@given(arrays(np.float64, (5, 3), elements=st.floats(0, 1e9)))
def test_scu_identities(cum):
    m = features.scu(pd.DataFrame(cum, columns=list("abc")))
    for c in m.values.columns:
        col = m.values[c].to_numpy()
        if c in m.degenerate:
            assert not col.any()
        else:
            assert abs(col.mean()) < 1e-9 and abs(col.std() - 1) < 1e-9


def test_transformers_follow_estimator_api():
    from sklearn.base import clone

    X = np.abs(np.random.default_rng(0).normal(size=(4, 336)))
    out = WeekSignatureTransformer().fit_transform(X)
    assert out.shape == X.shape and clone(RCATransformer()).get_params() == {}
    with pytest.raises(FeatureError):
        WeekSignatureTransformer().fit(np.ones((2, 100)))
    assert SCUTransformer().fit(X).transform(X).shape == X.shape


def _zone_series(rng, zones, cats, h0, hours):
    rows = [(z, h0 + h, c, float(rng.integers(1, 1000))) for z in zones for c in cats for h in range(hours)]
    return pd.DataFrame(rows, columns=["zone_id", "hour_utc", "category", "bytes"])


def test_compute_and_assemble_shapes():
    rng = np.random.default_rng(1)
    h0 = 17971 * 24  # 2019-03-16 00:00 UTC
    cats = ["a", "b", "c"]
    zs = _zone_series(rng, ["z1", "z2", "z3"], cats, h0, 336)
    fs = features.compute_features(zs, h0, h0 + 336, tz_offset_hours=1)
    assert fs.assemble("TWS").shape == (3, 168 * 3)
    assert fs.assemble("RCA").shape == (3, 3)
    assert fs.assemble("All").shape == (3, 168 * 3 + 6)
    assert list(fs.assemble("Cumulative").columns) == ["SCU:a", "SCU:b", "SCU:c"]
    with pytest.raises(FeatureError):
        fs.assemble("Everything")


def test_tws_column_count_for_19_categories():
    rng = np.random.default_rng(3)
    h0 = 17971 * 24
    cats = [f"c{i:02d}" for i in range(19)]
    zs = _zone_series(rng, ["z1", "z2"], cats, h0, 192)
    fs = features.compute_features(zs, h0, h0 + 192)
    assert fs.tws.shape[1] == 3192


def test_calendar_uses_whole_local_days():
    h0 = 17971 * 24
    days, first = features.local_calendar(h0, h0 + 336, tz_offset_hours=1)
    assert len(days) == 13 and days[0] == date(2019, 3, 17)
    days, _ = features.local_calendar(h0, h0 + 336, tz_offset_hours=0)
    assert len(days) == 14
