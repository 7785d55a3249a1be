import json

import pytest

from apptraffic.config import DEFAULTS, PipelineConfig, validate
from apptraffic.errors import ConfigError


@pytest.mark.parametrize("doc,path", [
    ({"ingest": {"percentile": 0}}, "ingest.percentile"),
    ({"ingest": {"percentile": 101}}, "ingest.percentile"),
    ({"ingest": {"bogus": 1}}, "ingest.bogus"),
    ({"tasks": {"selectors": ["Nope"]}}, "tasks.selectors.0"),
    ({"model": {"kind": "forest"}}, "model.kind"),
    ({"model": {"split_ratio": 1.0}}, "model.split_ratio"),
    ({"seed": -1}, "seed"),
    ({"tz_offset_hours": 20}, "tz_offset_hours"),
    ({"extra": True}, "extra"),
    ({"inputs": {"traffic": []}}, "inputs.traffic"),
])
def test_schema_errors_name_the_field(doc, path):
    with pytest.raises(ConfigError) as err:
        validate(doc)
    assert err.value.path == path
    assert str(err.value).startswith(path)


def test_defaults_and_scenario_inputs(tmp_path):
    cfg = PipelineConfig({"scenario": {"preset": "planted"}}, tmp_path)
    assert cfg["ingest"]["percentile"] == DEFAULTS["ingest"]["percentile"]
    assert cfg["inputs"]["traffic"] == "data/traffic.csv"
    assert cfg["tz_offset_hours"] == cfg.scenario_spec.tz_offset_hours
    assert cfg.out_dir == tmp_path / "run"
    with pytest.raises(ConfigError) as err:
        cfg.input_path("zones")
    assert err.value.path == "inputs.zones"


def test_unknown_scenario_field(tmp_path):
    with pytest.raises(ConfigError) as err:
        PipelineConfig({"scenario": {"preset": "null", "stations": 3}}, tmp_path)
    assert err.value.path == "scenario"
    with pytest.raises(ConfigError) as err:
        PipelineConfig({"scenario": {"n_stations": 2}}, tmp_path)
    assert err.value.path == "scenario.n_stations"


def test_relative_paths_follow_config_file(tmp_path):
    sub = tmp_path / "conf"
    sub.mkdir()
    (sub / "t.csv").write_text("x\n")
    path = sub / "c.json"
    path.write_text(json.dumps({"inputs": {"traffic": "t.csv", "zones": "/abs/z.geojson"}}))
    cfg = PipelineConfig.load(path)
    assert cfg.input_path("traffic") == [sub / "t.csv"]
    assert str(cfg.path(cfg["inputs"]["zones"])) == "/abs/z.geojson"


def test_hash_ignores_out_and_threads(tmp_path):
    a = PipelineConfig({"scenario": {}, "out": "a", "threads": 1}, tmp_path)
    b = PipelineConfig({"scenario": {}, "out": "b", "threads": 4}, tmp_path / "x")
    c = PipelineConfig({"scenario": {}, "seed": 1}, tmp_path)
    assert a.hash == b.hash != c.hash
    assert a.meta("train") == {"config_hash": a.hash, "seed": 0, "stage": "train"}


def test_override_maps_flags(tmp_path):
    cfg = PipelineConfig({}, tmp_path).override(percentile=95.0, percentile_filter=False, seed=3,
                                                targets=["poverty"], selectors=None)
    assert cfg["ingest"]["percentile"] == 95.0 and not cfg["ingest"]["percentile_filter"]
    assert cfg.seed == 3 and cfg["tasks"]["targets"] == ["poverty"]
    assert cfg["tasks"]["selectors"] == DEFAULTS["tasks"]["selectors"]
    with pytest.raises(ConfigError):
        PipelineConfig({}, tmp_path).override(percentile=0)


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        PipelineConfig.load(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ConfigError):
        PipelineConfig.load(bad)
