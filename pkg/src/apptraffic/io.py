"""Table and GeoJSON file helpers.

Pipeline outputs start with a ``# {...}`` metadata line (config hash, seed,
stage). Readers skip leading ``#`` lines, so hand-written inputs without the
record load the same way.
"""

import hashlib
import json
from pathlib import Path

import pandas as pd
from shapely.geometry import MultiPolygon, Polygon, mapping, shape

from .errors import FormatError, GeometryError
from .geometry import Zone, validate_polygon

FLOAT_FORMAT = "%.12g"


def meta_line(meta):
    return "# " + json.dumps(meta, sort_keys=True, separators=(",", ":")) + "\n"


def count_comment_lines(path):
    n = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            n += 1
    return n


def read_meta(path):
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    if first.startswith("# {"):
        return json.loads(first[2:])
    return None


def write_table(path, df, meta=None, float_format=FLOAT_FORMAT):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if meta is not None:
            fh.write(meta_line(meta))
        df.to_csv(fh, index=False, float_format=float_format, lineterminator="\n")


def read_table(path, **kwargs):
    return pd.read_csv(path, skiprows=count_comment_lines(path), **kwargs)


def write_json(path, obj, meta=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if meta is not None:
        obj = {"metadata": meta, **obj}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=False)
        fh.write("\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _features(path):
    doc = read_json(path)
    if doc.get("type") == "FeatureCollection":
        return doc.get("features", [])
    if doc.get("type") == "Feature":
        return [doc]
    raise FormatError(f"{path}: expected a GeoJSON Feature or FeatureCollection")


def read_zones(path):
    """Zones from a FeatureCollection whose features carry ``zone_id``."""
    zones = []
    for i, feat in enumerate(_features(path)):
        props = feat.get("properties") or {}
        if "zone_id" not in props:
            raise FormatError(f"{path}: feature {i} has no zone_id property")
        geom = shape(feat["geometry"])
        if not isinstance(geom, (Polygon, MultiPolygon)):
            raise GeometryError("zone geometry must be Polygon or MultiPolygon", props["zone_id"])
        zones.append(Zone(str(props["zone_id"]), validate_polygon(geom, props["zone_id"])))
    return zones


def read_region(path):
    feats = _features(path)
    if len(feats) != 1:
        raise FormatError(f"{path}: region file must hold exactly one feature")
    return validate_polygon(shape(feats[0]["geometry"]), "region")


def _round_coords(obj, ndigits):
    if isinstance(obj, (list, tuple)):
        if obj and isinstance(obj[0], float):
            return [round(v, ndigits) for v in obj]
        return [_round_coords(o, ndigits) for o in obj]
    return obj


def geometry_json(geom, ndigits=None):
    geo = mapping(geom)
    coords = json.loads(json.dumps(geo["coordinates"]))
    if ndigits is not None:
        coords = _round_coords(coords, ndigits)
    return {"type": geo["type"], "coordinates": coords}


def write_geojson(path, features, meta=None, ndigits=None):
    """``features`` is an iterable of (properties, geometry) pairs."""
    doc = {
        "type": "FeatureCollection",
        "features": [
            {"type": "Feature", "properties": props, "geometry": geometry_json(g, ndigits)}
            for props, g in features
        ],
    }
    write_json(path, doc, meta)
