"""Bounded Voronoi tessellation of base-station sites and cell/zone areal weights.

Cells are built by clipping the region's bounding box with the perpendicular
bisector half-planes of neighbouring sites (nearest first, stopping once no
farther site can cut the cell), then intersecting the convex result with the
region polygon. Polygons are shapely geometries throughout.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import shapely
from scipy import sparse
from scipy.spatial import cKDTree
from shapely.geometry import MultiPolygon, Polygon
from shapely.geometry.polygon import orient

from .errors import ConfigurationError, DuplicateSiteError, GeometryError

ORIENT_EPS = 1e-12
WEIGHT_FLOOR = 1e-12
EARTH_RADIUS_M = 6_371_008.8


@dataclass(frozen=True)
class Site:
    id: int
    x: float
    y: float


@dataclass(frozen=True)
class Zone:
    id: str
    shape: Polygon | MultiPolygon

    @property
    def area(self):
        return self.shape.area


@dataclass(frozen=True)
class VoronoiCell:
    site_id: int
    shape: Polygon | MultiPolygon
    area: float


@dataclass
class VoronoiTessellation:
    region: Polygon | MultiPolygon
    cells: list

    def cell(self, site_id):
        return self._by_id[site_id]

    def __post_init__(self):
        self._by_id = {c.site_id: c for c in self.cells}

    @property
    def site_ids(self):
        return [c.site_id for c in self.cells]


@dataclass
class AreaWeightMatrix:
    """Sparse (site, zone) -> area(cell & zone) / area(cell).

    ``rows``, ``cols`` index into ``site_ids`` / ``zone_ids``; entries are sorted
    by (site id, zone id).
    """

    site_ids: list
    zone_ids: list
    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray
    _lookup: dict = field(default=None, repr=False)

    def tocsr(self):
        shape = (len(self.site_ids), len(self.zone_ids))
        return sparse.csr_matrix((self.weights, (self.rows, self.cols)), shape=shape)

    def get(self, site_id, zone_id):
        if self._lookup is None:
            self._lookup = {
                (self.site_ids[r], self.zone_ids[c]): w
                for r, c, w in zip(self.rows, self.cols, self.weights)
            }
        return self._lookup.get((site_id, zone_id), 0.0)

    def row_sums(self):
        return np.bincount(self.rows, weights=self.weights, minlength=len(self.site_ids))

    def zones_of(self, site_id):
        r = self.site_ids.index(site_id)
        mask = self.rows == r
        return {self.zone_ids[c]: w for c, w in zip(self.cols[mask], self.weights[mask])}

    def sites_of(self, zone_id):
        c = self.zone_ids.index(zone_id)
        mask = self.cols == c
        return {self.site_ids[r]: w for r, w in zip(self.rows[mask], self.weights[mask])}

    def __len__(self):
        return len(self.weights)

    def to_records(self):
        for r, c, w in zip(self.rows, self.cols, self.weights):
            yield self.site_ids[r], self.zone_ids[c], float(w)


def validate_polygon(geom, ident=None):
    """Return ``geom`` with canonical ring orientation or raise GeometryError."""
    if not isinstance(geom, (Polygon, MultiPolygon)):
        raise GeometryError(f"expected Polygon or MultiPolygon, got {geom.geom_type}", ident)
    if geom.is_empty or not geom.is_valid:
        reason = shapely.is_valid_reason(geom)
        raise GeometryError(f"invalid polygon: {reason}", ident)
    if geom.area <= 0:
        raise GeometryError("polygon has zero area", ident)
    if isinstance(geom, Polygon):
        return orient(geom, sign=1.0)
    return MultiPolygon([orient(p, sign=1.0) for p in geom.geoms])


def equirectangular(lon, lat, lon0, lat0):
    """Project degrees to planar meters about (lon0, lat0)."""
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    k = math.pi / 180.0 * EARTH_RADIUS_M
    return (lon - lon0) * k * math.cos(math.radians(lat0)), (lat - lat0) * k


def project_geometry(geom, lon0, lat0):
    return shapely.transform(
        geom, lambda xy: np.column_stack(equirectangular(xy[:, 0], xy[:, 1], lon0, lat0))
    )


def projection_origin(region):
    """(lon0, lat0) used to project a lon/lat scenario: the region centroid."""
    c = region.centroid
    return float(c.x), float(c.y)


def project_scenario(region, zones, stations):
    """Project a lon/lat region, zones and stations (objects with id/lat/lon)
    to planar meters about the region centroid. Returns (region, zones, sites)."""
    lon0, lat0 = projection_origin(region)
    region_p = validate_polygon(project_geometry(region, lon0, lat0), "region")
    zones_p = [Zone(z.id, validate_polygon(project_geometry(z.shape, lon0, lat0), z.id)) for z in zones]
    lon = np.array([s.lon for s in stations], dtype=float)
    lat = np.array([s.lat for s in stations], dtype=float)
    x, y = equirectangular(lon, lat, lon0, lat0)
    sites = [Site(s.id, float(a), float(b)) for s, a, b in zip(stations, x, y)]
    return region_p, zones_p, sites


def _clip_halfplane(poly, nx, ny, c):
    """Sutherland-Hodgman clip of a convex vertex list against n.p <= c."""
    out = []
    n = len(poly)
    scale = abs(c) + abs(nx) + abs(ny)
    tol = ORIENT_EPS * scale
    for i in range(n):
        px, py = poly[i]
        qx, qy = poly[(i + 1) % n]
        sp = nx * px + ny * py - c
        sq = nx * qx + ny * qy - c
        p_in = sp <= tol
        q_in = sq <= tol
        if p_in:
            out.append((px, py))
        if p_in != q_in and abs(sp - sq) > 0:
            t = sp / (sp - sq)
            if 0.0 < t < 1.0:
                out.append((px + t * (qx - px), py + t * (qy - py)))
    return out


def _convex_cell(i, xy, tree, bbox):
    xi, yi = xy[i]
    poly = [(bbox[0], bbox[1]), (bbox[2], bbox[1]), (bbox[2], bbox[3]), (bbox[0], bbox[3])]
    n = len(xy)
    k = min(n, 16)
    done = 0
    while True:
        dist, idx = tree.query(xy[i], k=k)
        dist = np.atleast_1d(dist)
        idx = np.atleast_1d(idx)
        # tie-break equal distances by ascending site index
        order = np.lexsort((idx, dist))
        dist, idx = dist[order], idx[order]
        for d, j in zip(dist[done:], idx[done:]):
            if j == i:
                continue
            reach = max(math.hypot(px - xi, py - yi) for px, py in poly)
            if d > 2.0 * reach:
                return poly
            xj, yj = xy[j]
            nx, ny = xj - xi, yj - yi
            c = 0.5 * (xj * xj + yj * yj - xi * xi - yi * yi)
            poly = _clip_halfplane(poly, nx, ny, c)
            if len(poly) < 3:
                return poly
        if k >= n:
            return poly
        done = k
        k = min(n, 4 * k)


def build_tessellation(sites, region):
    """Voronoi cells of ``sites`` clipped to ``region``; one cell per site.

    Raises ConfigurationError for fewer than two sites, DuplicateSiteError for
    coincident locations and GeometryError for sites not strictly inside the
    region.
    """
    sites = sorted(sites, key=lambda s: s.id)
    if len(sites) < 2:
        raise ConfigurationError("at least 2 sites are required")
    ids = [s.id for s in sites]
    if len(set(ids)) != len(ids):
        raise ConfigurationError("site ids must be unique")
    region = validate_polygon(region, "region")
    xy = np.array([(s.x, s.y) for s in sites], dtype=float)
    if not np.all(np.isfinite(xy)):
        raise GeometryError("non-finite site coordinates")

    seen = {}
    for s in sites:
        key = (s.x, s.y)
        if key in seen:
            raise DuplicateSiteError(seen[key], s.id)
        seen[key] = s.id

    inside = shapely.contains_xy(region, xy[:, 0], xy[:, 1])
    for s, ok in zip(sites, inside):
        if not ok:
            raise GeometryError("site outside region", s.id)

    minx, miny, maxx, maxy = region.bounds
    pad = 1e-9 * max(maxx - minx, maxy - miny)
    bbox = (minx - pad, miny - pad, maxx + pad, maxy + pad)
    tree = cKDTree(xy)

    cells = []
    for i, s in enumerate(sites):
        verts = _convex_cell(i, xy, tree, bbox)
        convex = Polygon(verts) if len(verts) >= 3 else Polygon()
        shape = _polygonal(convex.intersection(region))
        cells.append(VoronoiCell(site_id=s.id, shape=shape, area=shape.area))
    return VoronoiTessellation(region=region, cells=cells)


def _polygonal(geom):
    """Drop lower-dimensional debris from an overlay result."""
    if isinstance(geom, (Polygon, MultiPolygon)):
        return geom
    parts = [g for g in getattr(geom, "geoms", []) if isinstance(g, Polygon) and g.area > 0]
    if not parts:
        return Polygon()
    return parts[0] if len(parts) == 1 else MultiPolygon(parts)


def polygon_intersection_area(a, b):
    """Area of ``a & b``. The operands are put in a canonical order first, so the
    result is bit-identical under argument swap."""
    a = validate_polygon(a)
    b = validate_polygon(b)
    if shapely.to_wkb(b) < shapely.to_wkb(a):
        a, b = b, a
    return float(shapely.intersection(a, b).area)


def areal_weights(tess, zones):
    """Sparse overlap weights area(cell & zone) / area(cell)."""
    zones = sorted(zones, key=lambda z: z.id)
    zone_ids = [z.id for z in zones]
    if len(set(zone_ids)) != len(zone_ids):
        raise GeometryError("duplicate zone ids")
    shapes = []
    for z in zones:
        if not z.shape.is_valid or z.shape.area <= 0:
            raise GeometryError("zone with zero area or invalid shape", z.id)
        shapes.append(z.shape)
    shapes = np.array(shapes, dtype=object)
    tree = shapely.STRtree(shapes)

    site_ids = [c.site_id for c in tess.cells]
    rows, cols, vals = [], [], []
    for r, cell in enumerate(tess.cells):
        if cell.area <= 0:
            continue
        cand = np.sort(tree.query(cell.shape, predicate="intersects"))
        if len(cand) == 0:
            continue
        inter = shapely.area(shapely.intersection(cell.shape, shapes[cand]))
        w = inter / cell.area
        # full containment: snap rounding noise so whole-region zones weigh exactly 1
        w[np.abs(w - 1.0) < WEIGHT_FLOOR] = 1.0
        keep = w >= WEIGHT_FLOOR
        rows.append(np.full(keep.sum(), r, dtype=np.int64))
        cols.append(cand[keep].astype(np.int64))
        vals.append(w[keep])
    if rows:
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
        vals = np.zeros(0)
    return AreaWeightMatrix(site_ids=site_ids, zone_ids=zone_ids, rows=rows, cols=cols, weights=vals)
