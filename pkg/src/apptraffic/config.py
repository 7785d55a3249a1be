"""Pipeline configuration: JSON schema, defaults, flag overrides and hashing.

Relative paths resolve against the config file's directory. The config hash
covers the resolved settings except the output directory, so moving a run
elsewhere keeps its outputs byte-identical.
"""

import copy
import hashlib
import json
from pathlib import Path

import jsonschema

from .errors import ConfigError
from .features import SELECTORS
from .model import MODEL_KINDS

TASK_SELECTORS = SELECTORS + ("Census",)

_PATH = {"type": "string", "minLength": 1}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "apptraffic pipeline config",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "inputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "traffic": {"oneOf": [_PATH, {"type": "array", "items": _PATH, "minItems": 1}]},
                "zones": _PATH,
                "region": _PATH,
                "indicators": _PATH,
                "category_map": _PATH,
            },
        },
        "scenario": {
            "type": "object",
            "properties": {
                "preset": {"enum": ["planted", "null", "noiseless"]},
                "dir": _PATH,
            },
        },
        "window": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"start": {"type": "string"}, "end": {"type": "string"}},
        },
        "projection": {"enum": ["equirectangular"]},
        "tz_offset_hours": {"type": "integer", "minimum": -12, "maximum": 14},
        "ingest": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "percentile": {"type": "number", "exclusiveMinimum": 0, "maximum": 100},
                "percentile_filter": {"type": "boolean"},
                "epsilon_m": {"type": "number", "minimum": 0},
                "row_budget": {"type": "integer", "minimum": 1000},
                "max_malformed_fraction": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "features": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"per_capita": {"type": "boolean"}},
        },
        "analysis": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "target": {"type": "string"},
                "classes": {"type": "integer", "minimum": 2},
                "categories": {"type": "array", "items": {"type": "string"}},
                "correlation_threshold": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "tasks": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "targets": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "selectors": {"type": "array", "items": {"enum": list(TASK_SELECTORS)},
                              "minItems": 1},
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": list(MODEL_KINDS)},
                "params": {"type": "object"},
                "split_ratio": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "folds": {"type": "integer", "minimum": 2},
            },
        },
        "explain": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "selectors": {"type": "array", "items": {"enum": list(SELECTORS)}},
                "top": {"type": "integer", "minimum": 1},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "threads": {"type": "integer", "minimum": 1},
        "out": _PATH,
    },
}

DEFAULTS = {
    "inputs": {},
    "window": {},
    "projection": "equirectangular",
    "tz_offset_hours": 0,
    "ingest": {"percentile": 99.0, "percentile_filter": True, "epsilon_m": 0.0,
               "row_budget": 5_000_000, "max_malformed_fraction": 0.01},
    "features": {"per_capita": False},
    "analysis": {"target": "median_income", "classes": 3,
                 "categories": ["social_media", "email", "gaming", "productivity"],
                 "correlation_threshold": 0.5},
    "tasks": {"targets": ["median_income", "poverty"],
              "selectors": ["Cumulative", "RCA", "TWS", "All", "Census"]},
    "model": {"kind": "gbdt", "params": {}, "split_ratio": 0.8, "folds": 5},
    "explain": {"selectors": ["All"], "top": 20},
    "seed": 0,
    "out": "run",
}

SCENARIO_FILES = {
    "traffic": "traffic.csv", "zones": "zones.geojson", "region": "region.geojson",
    "indicators": "indicators.csv", "category_map": "category_map.csv",
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "params":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _field_path(error):
    parts = [str(p) for p in error.absolute_path]
    if error.validator == "additionalProperties":
        extra = sorted(set(error.instance) - set(error.schema.get("properties", {})))
        parts += extra[:1]
    elif error.validator == "required":
        parts.append(error.message.split("'")[1])
    return ".".join(parts) or "<root>"


def validate(doc):
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        err = errors[0]
        raise ConfigError(err.message, _field_path(err))


class PipelineConfig:
    """Resolved configuration. ``data`` is the merged document; paths in it
    stay as written and are resolved through :meth:`path`."""

    def __init__(self, data, base_dir="."):
        validate(data)
        self.raw = copy.deepcopy(data)
        self.data = _merge(DEFAULTS, data)
        self.base_dir = Path(base_dir)
        if "scenario" in self.data:
            from .synthgen import ScenarioSpec

            scen = dict(self.data["scenario"])
            scen.setdefault("dir", "data")
            self.data["scenario"] = scen
            fields = {k: v for k, v in scen.items() if k not in ("preset", "dir")}
            try:
                preset = ScenarioSpec.preset(scen.get("preset", "planted"))
                self.scenario_spec = ScenarioSpec.from_dict({**preset.to_dict(), **fields})
            except TypeError as exc:
                raise ConfigError(str(exc), "scenario") from None
            self.scenario_spec.validate()
            # scenario inputs default to the generated files
            for key, name in SCENARIO_FILES.items():
                self.data["inputs"].setdefault(key, f"{scen['dir']}/{name}")
            if "tz_offset_hours" not in data:
                self.data["tz_offset_hours"] = self.scenario_spec.tz_offset_hours
        else:
            self.scenario_spec = None

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found", "--config") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}", str(path)) from None
        return cls(doc, path.parent)

    def override(self, **flags):
        """New config with flag values set; ``None`` values are ignored."""
        doc = copy.deepcopy(self.raw)
        mapping = {
            "percentile": ("ingest", "percentile"),
            "percentile_filter": ("ingest", "percentile_filter"),
            "per_capita": ("features", "per_capita"),
            "tz_offset_hours": ("tz_offset_hours",),
            "seed": ("seed",),
            "out": ("out",),
            "threads": ("threads",),
            "targets": ("tasks", "targets"),
            "selectors": ("tasks", "selectors"),
        }
        for name, value in flags.items():
            if value is None:
                continue
            keys = mapping[name]
            node = doc
            for k in keys[:-1]:
                node = node.setdefault(k, {})
            node[keys[-1]] = value
        return PipelineConfig(doc, self.base_dir)

    def __getitem__(self, key):
        return self.data[key]

    def path(self, value):
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def input_path(self, key, must_exist=True):
        value = self.data["inputs"].get(key)
        if value is None:
            raise ConfigError("input path not set", f"inputs.{key}")
        paths = [self.path(v) for v in (value if isinstance(value, list) else [value])]
        if must_exist:
            for p in paths:
                if not p.exists():
                    raise ConfigError(f"file {p} does not exist", f"inputs.{key}")
        return paths if isinstance(value, list) or key == "traffic" else paths[0]

    @property
    def out_dir(self):
        return self.path(self.data["out"])

    @property
    def seed(self):
        return int(self.data["seed"])

    @property
    def threads(self):
        return self.data.get("threads")

    def hashable(self):
        doc = {k: v for k, v in self.data.items() if k not in ("out", "threads")}
        if self.scenario_spec is not None:
            doc["scenario"] = {"dir": self.data["scenario"]["dir"], **self.scenario_spec.to_dict()}
        return doc

    @property
    def hash(self):
        text = json.dumps(self.hashable(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    def meta(self, stage):
        return {"config_hash": self.hash, "seed": self.seed, "stage": stage}

    def to_dict(self):
        return copy.deepcopy(self.hashable())
