import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcfarrival.domain import (GridSpec, ImplicitDomain, ShapeSpec, boundary_mean_curvature_min,
                               build_domain, shape_from_catalog, torus_mean_curvature_scan)
from mcfarrival.errors import ConfigurationError, MeanConvexityError


def test_disk_perimeter_129():
    s = ShapeSpec.ball(1.0, 2)
    d = build_domain(s, GridSpec.around(s, 129))
    assert abs(d.boundary_area - 2 * math.pi) <= 1e-3


def test_sphere_area_97_cubed():
    s = ShapeSpec.ball(1.0, 3)
    d = build_domain(s, GridSpec.around(s, 97))
    assert abs(d.boundary_area - 4 * math.pi) / (4 * math.pi) <= 5e-3


def test_sphere_area_axisymmetric():
    s = ShapeSpec.ball(1.0, 3)
    d = build_domain(s, GridSpec.around(s, 129, mode="axisymmetric"))
    assert abs(d.boundary_area - 4 * math.pi) / (4 * math.pi) <= 5e-3


def test_torus_area_axisymmetric():
    s = ShapeSpec.torus(1.0, 0.3)
    d = build_domain(s, GridSpec.around(s, 129, mode="axisymmetric"))
    exact = 4 * math.pi ** 2 * 0.3
    assert abs(d.boundary_area - exact) / exact <= 5e-3


def test_torus_scan_matches_inner_equator():
    hmin, th = torus_mean_curvature_scan(1.0, 0.3)
    assert hmin > 0
    assert hmin == pytest.approx(1 / 0.3 - 1 / 0.7, rel=1e-9)
    assert th == pytest.approx(math.pi)


def test_torus_domain_min_curvature_positive():
    s = ShapeSpec.torus(1.0, 0.3)
    d = build_domain(s, GridSpec.around(s, 65, mode="axisymmetric"))
    hmin, _ = torus_mean_curvature_scan(1.0, 0.3)
    assert boundary_mean_curvature_min(d) >= hmin * (1 - 1e-3)


@pytest.mark.parametrize("R, dim, expected", [(1.0, 3, 2.0), (2.0, 2, 0.5)])
def test_ball_mean_curvature(R, dim, expected):
    s = ShapeSpec.ball(R, dim)
    mode = "axisymmetric" if dim == 3 else None
    d = build_domain(s, GridSpec.around(s, 65, mode=mode))
    assert boundary_mean_curvature_min(d) == pytest.approx(expected, rel=1e-3)


def test_fat_torus_is_rejected():
    s = ShapeSpec.torus(1.0, 0.7)
    with pytest.raises(MeanConvexityError) as info:
        build_domain(s, GridSpec.around(s, 65, mode="axisymmetric"))
    assert info.value.h_min < 0


def test_shape_outside_box():
    s = ShapeSpec.ball(1.0, 2)
    grid = GridSpec((-0.5, -0.5), (0.5, 0.5), (64, 64))
    with pytest.raises(ConfigurationError):
        build_domain(s, grid)


def test_catalog_unknown():
    with pytest.raises(ConfigurationError):
        shape_from_catalog("blob")


@pytest.mark.parametrize("name", ["ball", "ellipsoid", "rounded-box", "torus"])
def test_catalog_shapes_build(name):
    s = shape_from_catalog(name)
    mode = "axisymmetric" if s.dim == 3 else None
    d = build_domain(s, GridSpec.around(s, 48, mode=mode))
    assert d.mask.any() and d.boundary_area > 0


def test_bad_specs():
    with pytest.raises(ConfigurationError):
        ShapeSpec.ball(-1.0)
    with pytest.raises(ConfigurationError):
        ShapeSpec("hexagon")
    with pytest.raises(ConfigurationError):
        GridSpec((0, 0), (1, 1), (8, 8))
    with pytest.raises(ConfigurationError):
        GridSpec((-1, 0), (1, 1), (32, 32), mode="axisymmetric")


def test_domain_json_roundtrip():
    s = ShapeSpec.rounded_box((1.0, 0.7))
    d = build_domain(s, GridSpec.around(s, 40))
    d2 = ImplicitDomain.from_json(d.to_json())
    assert np.array_equal(d.mask, d2.mask)
    assert d2.boundary_area == pytest.approx(d.boundary_area)


def test_with_spacing_exact():
    s = ShapeSpec.ball(1.0, 2)
    g = GridSpec.with_spacing(s, 1 / 32)
    assert all(sp == pytest.approx(1 / 32) for sp in g.spacing)


@settings(max_examples=25, deadline=None)
@given(r=st.floats(0.3, 2.0), cx=st.floats(-1.0, 1.0), cy=st.floats(-1.0, 1.0))
def test_ball_level_is_signed_distance(r, cx, cy):
    s = ShapeSpec.ball(r, 2, center=(cx, cy))
    pts = np.array([[cx, cy], [cx + r, cy], [cx, cy + 2 * r]])
    assert np.allclose(s.level(pts), [-r, 0.0, r])


@settings(max_examples=15, deadline=None)
@given(r=st.floats(0.4, 2.0), cells=st.integers(40, 90))
def test_disk_perimeter_scales(r, cells):
    s = ShapeSpec.ball(r, 2)
    d = build_domain(s, GridSpec.around(s, cells))
    assert abs(d.boundary_area - 2 * math.pi * r) / (2 * math.pi * r) < 2e-3


@settings(max_examples=30, deadline=None)
@given(R0=st.floats(0.5, 3.0), frac=st.floats(0.05, 0.95))
def test_torus_scan_sign(R0, frac):
    rho0 = frac * R0
    hmin, _ = torus_mean_curvature_scan(R0, rho0)
    # inner equator value 1/rho0 - 1/(R0 - rho0) decides mean convexity
    assert (hmin > 0) == (1 / rho0 - 1 / (R0 - rho0) > 0)


@pytest.mark.parametrize("name, inradius", [("ellipsoid", 0.6), ("rounded-box", 0.7)])
@pytest.mark.parametrize("cells", [48, 65, 97])
def test_distance_estimate_bounded(name, inradius, cells):
    # the level function of these shapes has a critical point at the center
    d = build_domain(shape_from_catalog(name), GridSpec.around(shape_from_catalog(name), cells))
    dist = d.distance()[d.mask]
    assert np.isfinite(dist).all()
    assert dist.max() <= inradius + d.grid.h
    assert dist.min() >= 0
