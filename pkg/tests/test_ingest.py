import io as _io
from collections import defaultdict
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from apptraffic import ingest
from apptraffic.errors import ConfigError, FormatError, IngestError
from apptraffic.ingest import TrafficRecord, TrafficSchema

HEADER = "timestamp_utc,lat,lon,app_id,uplink_bytes,downlink_bytes\n"
T0 = datetime(2019, 3, 18, tzinfo=timezone.utc)


def lines(rows):
    return _io.StringIO(HEADER + "".join(rows))


def random_records(rng, n, n_apps=6, n_sites=4, hours=30):
    locs = [(48.8 + 0.01 * i, 2.3 + 0.01 * i) for i in range(n_sites)]
    out = []
    for _ in range(n):
        lat, lon = locs[rng.integers(n_sites)]
        ts = T0 + timedelta(minutes=int(rng.integers(hours * 60)))
        out.append(TrafficRecord(ts, lat, lon, f"app{rng.integers(n_apps)}",
                                 int(rng.integers(0, 1000)), int(rng.integers(0, 5000))))
    return out


def test_parse_valid_and_malformed():
    text = lines([
        "2019-03-18T10:05,48.85,2.35,com.a,10,20\n",
        "2019-03-18T10:06Z,48.85,2.35,com.a,1,2\n",
        "# comment\n",
        "bad,48.85,2.35,com.a,1,2\n",
    ] + ["2019-03-18T10:07,48.85,2.35,com.b,3,4\n"] * 200)
    stats = ingest.ParseStats()
    recs = list(ingest.parse_traffic(text, stats=stats))
    assert len(recs) == 202 and stats.malformed == 1
    assert recs[0].total_bytes == 30 and recs[0].timestamp.tzinfo is not None


def test_negative_bytes_and_malformed_limit():
    rows = ["2019-03-18T10:05,48.85,2.35,com.a,-1,2\n"] + ["2019-03-18T10:05,48.85,2.35,com.a,1,2\n"] * 9
    with pytest.raises(IngestError):
        list(ingest.parse_traffic(lines(rows)))
    with pytest.raises(FormatError):
        list(ingest.parse_traffic(_io.StringIO("timestamp_utc,lat\n")))


def test_window_filter():
    schema = TrafficSchema(window_start=T0, window_end=T0 + timedelta(hours=1))
    stats = ingest.ParseStats()
    rows = ["2019-03-18T00:30,48.85,2.35,a,1,1\n", "2019-03-18T01:00,48.85,2.35,a,1,1\n"]
    assert len(list(ingest.parse_traffic(lines(rows), schema, stats))) == 1
    assert stats.out_of_window == 1


def naive_clusters(coords, eps):
    """Single linkage by repeated merging of any close pair."""
    from apptraffic.geometry import equirectangular

    uniq = sorted(set(coords))
    arr = np.array(uniq)
    x, y = equirectangular(arr[:, 1], arr[:, 0], arr[:, 1].mean(), arr[:, 0].mean())
    groups = [{i} for i in range(len(uniq))]
    merged = True
    while merged:
        merged = False
        for a in range(len(groups)):
            for b in range(a + 1, len(groups)):
                if any(np.hypot(x[i] - x[j], y[i] - y[j]) < eps for i in groups[a] for j in groups[b]):
                    groups[a] |= groups.pop(b)
                    merged = True
                    break
            if merged:
                break
    return sorted(sorted(uniq[i] for i in g) for g in groups)


@given(st.lists(st.tuples(st.integers(0, 30), st.integers(0, 30)), min_size=1, max_size=25),
       st.sampled_from([0.0, 50.0, 150.0, 400.0]))
def test_union_find_matches_naive_linkage(cells, eps):
    coords = [(48.8 + 0.001 * a, 2.3 + 0.001 * b) for a, b in cells]
    stations, lookup = ingest.cluster_coordinates(coords, eps)
    got = defaultdict(list)
    for c, sid in lookup.items():
        got[sid].append(c)
    assert sorted(sorted(v) for v in got.values()) == naive_clusters(coords, eps)
    # ids follow ascending smallest member
    firsts = [min(got[s.id]) for s in stations]
    assert firsts == sorted(firsts)
    assert sum(s.antennas for s in stations) == len(set(coords))


@given(st.dictionaries(st.text("abcde", min_size=1, max_size=3), st.integers(0, 100), min_size=1),
       st.sampled_from([1, 10, 50, 90, 99, 99.5, 100]))
def test_top_percentile_matches_sort_and_scan(totals, p):
    kept = ingest.select_top_apps(totals, p)
    ranked = sorted(totals.items(), key=lambda kv: (-kv[1], kv[0]))
    grand = sum(totals.values())
    expect, cum = set(), 0
    for app, t in ranked:
        expect.add(app)
        cum += t
        if cum * 100 >= p * grand:
            break
    assert kept == expect


def test_percentile_bounds():
    with pytest.raises(ConfigError):
        ingest.select_top_apps({"a": 1}, 0)


def test_rollup_matches_naive(tmp_path):
    rng = np.random.default_rng(5)
    recs = random_records(rng, 400)
    catmap = {f"app{i}": "cat" + str(i % 3) for i in range(5)}  # app5 unmapped
    stations, by_site = ingest.group_antennas(recs)
    stats = {}
    got = ingest.categorize_and_rollup(by_site, catmap, stats)
    naive = defaultdict(int)
    unmapped = 0
    site_of = {(s.lat, s.lon): s.id for s in stations}
    for r in recs:
        if r.app_id not in catmap:
            unmapped += 1
            continue
        naive[(site_of[(r.lat, r.lon)], ingest.hour_index(r.timestamp), catmap[r.app_id])] += (
            r.uplink_bytes + r.downlink_bytes)
    assert stats["unmapped"] == unmapped
    assert {(int(a), int(b), c): int(v) for a, b, c, v in got.itertuples(index=False)} == dict(naive)


def _write(path, recs):
    with open(path, "w") as fh:
        fh.write(HEADER)
        for r in recs:
            fh.write(f"{r.timestamp:%Y-%m-%dT%H:%M},{r.lat},{r.lon},{r.app_id},{r.uplink_bytes},"
                     f"{r.downlink_bytes}\n")


def test_ingest_files_spill_equivalence(tmp_path):
    rng = np.random.default_rng(8)
    recs = random_records(rng, 3000)
    _write(tmp_path / "a.csv", recs[:1500])
    _write(tmp_path / "b.csv", recs[1500:])
    catmap = {f"app{i}": f"c{i % 2}" for i in range(6)}
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    full = ingest.ingest_files(paths, catmap, percentile=90)
    spilled = ingest.ingest_files(paths, catmap, percentile=90, row_budget=7, spill_dir=tmp_path)
    assert full.rollup.equals(spilled.rollup)
    assert not list(tmp_path.glob("rollup-*"))
    kept = ingest.select_top_apps(ingest.app_totals(recs), 90)
    expect = sum(r.total_bytes for r in recs if r.app_id in kept)
    assert int(full.rollup["total_bytes"].sum()) == expect
    assert full.stats["filtered_records"] == sum(r.app_id not in kept for r in recs)


def test_hour_helpers_round_trip():
    hours = np.array([0, 5, 431000, 431001, 5])
    text = ingest.format_hours(hours)
    assert list(text) == [ingest.format_hour(h) for h in hours]
    assert list(ingest.parse_hours(text)) == list(hours)
    assert ingest.parse_hour("1970-01-01T02:59") == 2
