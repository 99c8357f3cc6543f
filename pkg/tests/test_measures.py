import math
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import exact_ball3, exact_disk
from mcfarrival.contour import extract
from mcfarrival.domain import GridSpec, ShapeSpec, build_domain
from mcfarrival.errors import ConfigurationError, EmptySlabError
from mcfarrival.fields import ScalarField
from mcfarrival.measures import (DegenerateLevelWarning, TestFunction,
                                 annulus_fraction, default_eta, defect_measure_scan,
                                 degenerate_volume, domain_fraction, extract_level_set,
                                 inverse_gradient_measure, mean_curvature_field, measure_curve,
                                 measure_mu, measure_mu_coarea, measure_mu_uncertainty,
                                 phi_catalog)


def _disk(cells=129):
    s = ShapeSpec.ball(1.0, 2)
    return build_domain(s, GridSpec.around(s, cells))


def _ball3(cells=129):
    s = ShapeSpec.ball(1.0, 3)
    return build_domain(s, GridSpec.around(s, cells, mode="axisymmetric"))


@pytest.fixture(scope="module")
def disk_exact():
    return exact_disk(_disk())


@pytest.fixture(scope="module")
def ball_exact():
    return exact_ball3(_ball3())


# -- contours


def test_disk_level_length(disk_exact):
    cs = extract_level_set(disk_exact, 0.375)
    assert cs.total == pytest.approx(2 * math.pi * 0.5, rel=0.01)


def test_ball_level_area(ball_exact):
    cs = extract_level_set(ball_exact, 0.1875)
    assert cs.total == pytest.approx(math.pi, rel=0.02)


def test_levels_above_max_are_empty(disk_exact):
    with pytest.warns(DegenerateLevelWarning):
        cs = extract_level_set(disk_exact, 0.6)
    assert cs.empty and cs.total == 0.0


def test_normals_point_outward(disk_exact):
    cs = extract_level_set(disk_exact, 0.2)
    pts = cs.elements.points
    radial = pts / np.linalg.norm(pts, axis=1)[:, None]
    assert np.min(np.sum(radial * cs.normals, axis=1)) > 0.999
    assert np.min(np.sum(cs.geometric_normals() * cs.normals, axis=1)) > 0.99


def test_contour_files(tmp_path, disk_exact, ball_exact):
    extract_level_set(disk_exact, 0.2).write(tmp_path / "c.csv")
    header = (tmp_path / "c.csv").read_text().splitlines()[0]
    assert header == "x0,y0,x1,y1,weight"
    s = ShapeSpec.ball(1.0, 3)
    d = build_domain(s, GridSpec.around(s, 40))
    extract_level_set(exact_ball3(d), 0.1).write(tmp_path / "s.obj")
    txt = (tmp_path / "s.obj").read_text()
    assert txt.count("\nf ") > 100


@settings(max_examples=20, deadline=None)
@given(r=st.floats(0.15, 1.0))
def test_circle_contours_any_radius(r):
    g = GridSpec((-1.2, -1.2), (1.2, 1.2), (121, 121))
    x = g.points()
    vals = r - np.linalg.norm(x, axis=-1)
    el = extract(vals, 0.0, g)
    assert el.total == pytest.approx(2 * math.pi * r, rel=0.01)


# -- mu_t(phi)


def test_mu_one_disk(disk_exact):
    phi = phi_catalog("one", disk_exact.domain)
    assert measure_mu(disk_exact, 0.375, phi) == pytest.approx(math.pi, rel=0.01)


def test_mu_disjoint_support_is_zero(disk_exact):
    phi = TestFunction("bump", (0.8, 0.8), (1.2, 1.2))
    assert measure_mu(disk_exact, 0.375, phi) == 0.0


def test_mu_zero_phi(disk_exact):
    phi = phi_catalog("zero", disk_exact.domain)
    assert measure_mu(disk_exact, 0.2, phi) == 0.0
    assert measure_mu_coarea(disk_exact, 0.2, None, phi) == 0.0


def test_half_plane_bump_contour_vs_coarea(disk_exact):
    """Bump supported in {x1 > 0}: contour and coarea routes agree within their uncertainties."""
    phi = TestFunction("bump", (0.0, -1.1), (1.1, 1.1))
    t = 0.05
    a, ua = measure_mu_uncertainty(disk_exact, t, phi)
    b, ub = measure_mu_coarea(disk_exact, t, None, phi, with_uncertainty=True)
    assert a > 0
    assert abs(a - b) <= ua + ub
    # symmetric bump about x1 = 0 doubles the half-plane weight when mirrored
    mirrored = TestFunction("bump", (-1.1, -1.1), (0.0, 1.1))
    assert measure_mu(disk_exact, t, mirrored) == pytest.approx(a, rel=1e-3)


def test_coarea_delta_example_at_257():
    u = exact_disk(_disk(257))
    phi = phi_catalog("one", u.domain)
    assert measure_mu_coarea(u, 0.375, 0.02, phi) == pytest.approx(math.pi, rel=0.02)


def test_coarea_precondition(disk_exact):
    phi = phi_catalog("one", disk_exact.domain)
    with pytest.raises(ConfigurationError):
        measure_mu_coarea(disk_exact, 0.375, 0.001, phi)


def test_empty_slab(disk_exact):
    phi = phi_catalog("one", disk_exact.domain)
    with pytest.raises(EmptySlabError):
        measure_mu_coarea(disk_exact, 5.0, None, phi)


def test_measure_curve_monotone_times(tmp_path, disk_exact):
    phi = phi_catalog("one", disk_exact.domain)
    curve = measure_curve(disk_exact, [0.3, 0.1, 0.2], phi)
    assert curve.t == [0.1, 0.2, 0.3]
    assert curve.mu[0] > curve.mu[1] > curve.mu[2]
    with pytest.raises(ValueError):
        curve.append(0.25, 1.0, "contour", 0.0)
    curve.write_csv(tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text().startswith("t,mu,method,uncertainty")


def test_measure_curve_coarea(disk_exact):
    phi = phi_catalog("one", disk_exact.domain)
    c = measure_curve(disk_exact, [0.1, 0.3], phi, method="coarea")
    t, mu = c.arrays()
    exact = 2 * math.pi * np.sqrt(1 - 2 * t)
    assert np.all(np.abs(mu - exact) <= np.asarray(c.uncertainty) + 0.01 * exact)


@settings(max_examples=15, deadline=None)
@given(scale=st.floats(0.1, 10.0), t=st.floats(0.05, 0.45))
def test_mu_linear_in_phi(disk_exact, scale, t):
    p1 = TestFunction("bump", (-1.1, -1.1), (1.1, 1.1))
    p2 = TestFunction("bump", (-1.1, -1.1), (1.1, 1.1), scale=scale)
    assert measure_mu(disk_exact, t, p2) == pytest.approx(scale * measure_mu(disk_exact, t, p1))


def test_phi_gradient_matches_fd():
    rng = np.random.default_rng(0)
    for phi in (TestFunction("one-on-box", (-1, -1), (1, 1), 0.3),
                TestFunction("bump", (-1, -0.5), (1, 1.5)),
                TestFunction("shifted-bump", (-1, -1), (1, 1), shift=(0.3, 0.0))):
        x = rng.uniform(-1, 1, (50, 2))
        eps = 1e-6
        fd = np.stack([(phi(x + eps * e) - phi(x - eps * e)) / (2 * eps) for e in np.eye(2)], axis=1)
        assert np.allclose(phi.gradient(x), fd, atol=1e-6)


def test_phi_catalog_unknown(disk_exact):
    with pytest.raises(ConfigurationError):
        phi_catalog("wavelet", disk_exact.domain)


# -- curvature


def test_disk_curvature_magnitude(disk_exact):
    H = mean_curvature_field(disk_exact)
    r = np.linalg.norm(disk_exact.grid.points(), axis=-1)
    ring = np.abs(r - 0.5) < disk_exact.grid.h
    assert np.allclose(H.magnitude()[ring], 1 / r[ring], rtol=0.02)
    assert np.median(H.magnitude()[ring]) == pytest.approx(2.0, rel=0.02)


def test_ball_curvature_magnitude(ball_exact):
    H = mean_curvature_field(ball_exact)
    r = np.linalg.norm(ball_exact.grid.points(), axis=-1)
    band = (r > 0.3) & (r < 0.8) & ball_exact.mask
    assert np.allclose(H.magnitude()[band], 2 / r[band], rtol=0.02)


def test_constant_field_fully_degenerate():
    d = _disk(33)
    f = ScalarField(np.full(d.grid.shape, 0.3), d)
    H = mean_curvature_field(f, eta=1e-3)
    assert np.all(H.degenerate[d.mask])
    with pytest.raises(ConfigurationError):
        mean_curvature_field(f, eta=0.0)


# -- inverse-gradient measures


def test_disk_inverse_gradient_with_center_hole():
    # cut-cell quadrature error oscillates in sign, so check an O(h) envelope
    errs, hs = [], []
    for n in (65, 129, 257, 513):
        u = exact_disk(_disk(n))
        region = domain_fraction(u.domain) * annulus_fraction(u.grid, (0, 0), 0.05, 10.0)
        val = inverse_gradient_measure(u, 0.0, region, eta=0.0)
        errs.append(abs(val - 2 * math.pi * 0.95))
        hs.append(u.grid.h)
    assert all(e <= h for e, h in zip(errs, hs))
    assert max(errs[1:]) <= errs[0] / 4


def test_ball_inverse_gradient_with_center_hole(ball_exact):
    r0 = 0.1
    u = ball_exact
    region = domain_fraction(u.domain) * annulus_fraction(u.grid, (0, 0), r0, 10.0)
    val = inverse_gradient_measure(u, 0.0, region, eta=0.0)
    assert val == pytest.approx(4 * math.pi * (1 - r0 ** 2), rel=5e-3)


@settings(max_examples=10, deadline=None)
@given(extra=st.floats(1.0, 5.0))
def test_inverse_gradient_bound_for_large_eps(disk_exact, extra):
    eps = extra * float(disk_exact.gradient_norm()[disk_exact.mask].max())
    vol = float(disk_exact.grid.cell_volumes()[disk_exact.mask].sum())
    assert inverse_gradient_measure(disk_exact, eps) <= vol / eps


def test_excluded_volume_reported(disk_exact):
    eta = default_eta(disk_exact)
    _, excl = inverse_gradient_measure(disk_exact, 0.0, eta=eta, return_excluded=True)
    assert excl == pytest.approx(degenerate_volume(disk_exact, eta))
    assert 0 < excl < 0.05


def test_defect_scan_ball(disk129_deep):
    d, cont = disk129_deep
    regions = [domain_fraction(d) * annulus_fraction(d.grid, (0, 0), a, a + 0.1)
               for a in (0.3, 0.5, 0.7)]
    est = defect_measure_scan(cont.fields, cont.ladder.values, cont.u, regions)
    for e in est:
        assert e.monotone_tail
        assert abs(e.gamma) <= 0.03 * e.alpha


def test_defect_zero_region(disk129):
    d, cont = disk129
    est = defect_measure_scan(cont.fields, cont.ladder.values, cont.u, [np.zeros(d.grid.shape)])
    assert est[0].gamma == 0.0 and est[0].alpha == 0.0


def test_defect_torus_away_from_collapse(torus129):
    d, cont = torus129
    # outer half of the tube, away from the core circle where the flow collapses
    rho = d.grid.points()[..., 0]
    region = domain_fraction(d) * (rho > 1.15)
    est = defect_measure_scan(cont.fields, cont.ladder.values, cont.u, [region])[0]
    # the early rungs are saturated by eps; from the largest step onward the
    # alpha^eps sequence settles with shrinking increments
    steps = np.abs(np.diff(est.alpha_eps))
    tail = steps[int(np.argmax(steps)):]
    assert len(tail) >= 3
    assert all(b < a for a, b in zip(tail, tail[1:]))
    assert abs(est.gamma) <= 0.03 * est.alpha
