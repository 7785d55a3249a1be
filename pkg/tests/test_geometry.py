import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial import cKDTree
from shapely.geometry import Polygon, box

from apptraffic import geometry
from apptraffic.errors import ConfigurationError, DuplicateSiteError, GeometryError
from apptraffic.geometry import Site, Zone


def random_sites(rng, n, lo=0.0, hi=1.0):
    xy = rng.uniform(lo, hi, (n, 2))
    return [Site(i, float(x), float(y)) for i, (x, y) in enumerate(xy)]


def raster_areas(sites, res):
    """Nearest-site pixel counts over the unit square."""
    c = (np.arange(res) + 0.5) / res
    gx, gy = np.meshgrid(c, c)
    xy = np.array([(s.x, s.y) for s in sites])
    _, idx = cKDTree(xy).query(np.column_stack([gx.ravel(), gy.ravel()]))
    return np.bincount(idx, minlength=len(sites)) / res**2


def test_cells_match_raster_oracle():
    rng = np.random.default_rng(11)
    sites = random_sites(rng, 20)
    tess = geometry.build_tessellation(sites, box(0, 0, 1, 1))
    areas = np.array([tess.cell(s.id).area for s in sites])
    oracle = raster_areas(sites, 512)
    np.testing.assert_allclose(areas, oracle, rtol=0.05)


def test_nonconvex_region_is_respected():
    region = Polygon([(0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2)])
    sites = [Site(0, 0.5, 0.5), Site(1, 1.5, 0.5), Site(2, 0.5, 1.5)]
    tess = geometry.build_tessellation(sites, region)
    assert sum(c.area for c in tess.cells) == pytest.approx(region.area, rel=1e-12)
    for c in tess.cells:
        assert region.buffer(1e-9).contains(c.shape)


sites_strategy = st.lists(
    st.tuples(st.floats(0.01, 0.99), st.floats(0.01, 0.99)), min_size=2, max_size=25,
    unique_by=lambda p: (round(p[0], 6), round(p[1], 6)),
)


@given(sites_strategy)
def test_cells_partition_region(points):
    sites = [Site(i, x, y) for i, (x, y) in enumerate(points)]
    tess = geometry.build_tessellation(sites, box(0, 0, 1, 1))
    assert sum(c.area for c in tess.cells) == pytest.approx(1.0, abs=1e-9)
    xy = np.array(points)
    # every site's own cell holds its site, and no cell holds a point closer to another site
    for c in tess.cells:
        rp = c.shape.representative_point()
        d = np.hypot(xy[:, 0] - rp.x, xy[:, 1] - rp.y)
        assert d[c.site_id] <= d.min() + 1e-9


@given(sites_strategy, st.integers(1, 5), st.integers(1, 5))
def test_weight_rows_sum_to_one_on_tiling_zones(points, rows, cols):
    sites = [Site(i, x, y) for i, (x, y) in enumerate(points)]
    tess = geometry.build_tessellation(sites, box(0, 0, 1, 1))
    zones = [Zone(f"z{r}{c}", box(c / cols, r / rows, (c + 1) / cols, (r + 1) / rows))
             for r in range(rows) for c in range(cols)]
    w = geometry.areal_weights(tess, zones)
    np.testing.assert_allclose(w.row_sums(), 1.0, atol=1e-9)
    assert np.all(w.weights > 0) and np.all(w.weights <= 1.0)


def test_interior_zone_weight_is_exactly_one():
    sites = [Site(0, 0.25, 0.5), Site(1, 0.75, 0.5)]
    tess = geometry.build_tessellation(sites, box(0, 0, 1, 1))
    w = geometry.areal_weights(tess, [Zone("left", box(0, 0, 0.5, 1)), Zone("right", box(0.5, 0, 1, 1))])
    assert w.get(0, "left") == 1.0 and w.get(1, "right") == 1.0
    assert w.get(0, "right") == 0.0


def test_intersection_area_symmetric():
    a = Polygon([(0, 0), (3, 0.2), (2.5, 2), (0.1, 1.7)])
    b = box(1, -1, 4, 1.1)
    assert geometry.polygon_intersection_area(a, b) == geometry.polygon_intersection_area(b, a)
    assert geometry.polygon_intersection_area(a, box(10, 10, 11, 11)) == 0.0


def test_errors():
    region = box(0, 0, 1, 1)
    with pytest.raises(ConfigurationError):
        geometry.build_tessellation([Site(0, 0.5, 0.5)], region)
    with pytest.raises(DuplicateSiteError):
        geometry.build_tessellation([Site(0, 0.5, 0.5), Site(1, 0.5, 0.5)], region)
    with pytest.raises(GeometryError):
        geometry.build_tessellation([Site(0, 0.5, 0.5), Site(1, 1.5, 0.5)], region)
    bowtie = Polygon([(0, 0), (1, 1), (1, 0), (0, 1)])
    with pytest.raises(GeometryError):
        geometry.validate_polygon(bowtie)


def test_projection_round_numbers():
    x, y = geometry.equirectangular(2.35 + 0.01, 48.85, 2.35, 48.85)
    assert y == pytest.approx(0.0)
    assert x == pytest.approx(0.01 * np.pi / 180 * geometry.EARTH_RADIUS_M * np.cos(np.radians(48.85)))
