import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import exact_ball3, exact_disk
from mcfarrival.domain import GridSpec, ShapeSpec, build_domain
from mcfarrival.errors import ConfigurationError, PerturbationError, WindowError
from mcfarrival.fields import ScalarField, centered_gradient
from mcfarrival.measures import default_eta
from mcfarrival.solver import epsilon_continuation, EpsilonLadder
from mcfarrival.variational import (C1, C2, C_FIELD, FIELD_ANNULUS, Annulus, CompetitorSet,
                                    Perturbation, Window, annulus_field_residual,
                                    blister_competitor, calibrate_field_constant,
                                    calibrate_tolerances, calibration_check, coarea_J,
                                    dilated_competitor, functional_J, functional_J_set,
                                    level_set_competitor, minimality_probe,
                                    outward_area_minimality, probe_tolerance,
                                    random_perturbations, set_perimeter,
                                    set_submodularity_gap, set_tolerance, shrunk_competitor,
                                    submodularity_gap, uniqueness_two_route)


def _disk(cells=129):
    s = ShapeSpec.ball(1.0, 2)
    return build_domain(s, GridSpec.around(s, cells))


@pytest.fixture(scope="module")
def disk_exact():
    return exact_disk(_disk())


# -- frozen constants


def test_frozen_constants_cover_calibration():
    c1, c2 = calibrate_tolerances()
    assert c1 <= C1 <= 1.05 * c1 + 0.01
    assert c2 <= C2 <= 1.05 * c2
    cf = calibrate_field_constant()
    assert cf <= C_FIELD <= 1.05 * cf


# -- function functional


ANNULUS_J = 2 * math.pi * (0.7 ** 3 - 0.3 ** 3) / 3 - math.pi * (
    (0.7 - 0.7 ** 3 / 3) - (0.3 - 0.3 ** 3 / 3))


def test_annulus_closed_form():
    assert ANNULUS_J == pytest.approx(-0.263894, abs=1e-6)
    errs = []
    for n in (129, 257):
        u = exact_disk(_disk(n))
        parts = functional_J(u, u, Annulus((0, 0), 0.3, 0.7), return_parts=True)
        err = abs(parts.value - ANNULUS_J)
        assert err <= C1 * u.grid.h * parts.total_variation
        errs.append(err)
    assert errs[1] < errs[0]


def test_shrinking_window_decreases_tv(disk_exact):
    outer = Window((-0.5, -0.5), (0.5, 0.5))
    tv = [functional_J(disk_exact, disk_exact, outer.shrink(s), return_parts=True).total_variation
          for s in (0.0, 0.1, 0.2, 0.3)]
    assert all(np.isfinite(tv))
    assert all(b < a for a, b in zip(tv, tv[1:]))


def test_window_errors(disk_exact):
    with pytest.raises(WindowError):
        functional_J(disk_exact, disk_exact, Window((0.5, 0.5), (1.2, 1.2)))
    with pytest.raises(ConfigurationError):
        Window((0, 0), (0, 1))
    v = disk_exact.values.copy()
    v[disk_exact.mask] += 1e-3
    with pytest.raises(ConfigurationError):
        functional_J(disk_exact, v, Window((-0.3, -0.3), (0.3, 0.3)))


# -- set functional


@pytest.mark.parametrize("t", [0.1, 0.25, 0.4])
def test_level_set_has_zero_J(disk_exact, t):
    E = level_set_competitor(disk_exact, t)
    parts = functional_J_set(disk_exact, E, return_parts=True)
    tol = set_tolerance(disk_exact, parts.total_variation, parts.excluded_volume)
    assert abs(parts.value) <= tol
    assert parts.total_variation == pytest.approx(2 * math.pi * math.sqrt(1 - 2 * t), rel=0.01)


def test_shrunk_competitor_not_better(disk129):
    _, cont = disk129
    u = cont.u
    for t in (0.1, 0.25):
        E = level_set_competitor(u, t)
        F = shrunk_competitor(u, t, 1, E.window)
        je = functional_J_set(u, E, return_parts=True)
        jf = functional_J_set(u, F, return_parts=True)
        tol = set_tolerance(u, je.total_variation + jf.total_variation,
                            je.excluded_volume + jf.excluded_volume)
        assert jf.value >= je.value - tol


def test_empty_competitor(disk_exact):
    K = Window((0.6, 0.1), (0.8, 0.3))
    F = CompetitorSet(np.zeros(disk_exact.grid.shape), K)
    assert functional_J_set(disk_exact, F) == 0.0


def test_competitor_validation(disk_exact):
    K = Window((-0.2, -0.2), (0.2, 0.2))
    with pytest.raises(ConfigurationError):
        CompetitorSet(np.full(disk_exact.grid.shape, 0.5), K)
    with pytest.raises(ConfigurationError):
        CompetitorSet(np.zeros(disk_exact.grid.shape), K, relation="touching")


# -- minimality probes


def test_fifty_bump_add_probes(disk129):
    _, cont = disk129
    table = minimality_probe(cont.u, random_perturbations(cont.u, 50, seed=11, kinds=("bump-add",)))
    assert len(table) == 50
    assert table.passed


def test_exact_competitor(disk129):
    d, cont = disk129
    u, ex = cont.u, exact_disk(d)
    eta = default_eta(u)
    for p in random_perturbations(u, 8, seed=3, kinds=("bump-add",)):
        bump, _ = p._bump(d.grid)
        v = ScalarField(u.values + bump * (ex.values - u.values), d)
        dj = functional_J(u, v, p.window, eta) - functional_J(u, u, p.window, eta)
        assert abs(dj) <= probe_tolerance(u, v, p.window, eta)


def test_zero_amplitude(disk129):
    _, cont = disk129
    ps = [Perturbation(k, p.window, 0.0) for k, p in
          zip(("bump-add", "random-lipschitz"), random_perturbations(cont.u, 2, seed=1))]
    table = minimality_probe(cont.u, ps)
    assert all(r.delta_j == 0.0 for r in table.rows)


def test_perturbation_errors(disk_exact):
    K = Window((-0.3, -0.3), (0.3, 0.3))
    with pytest.raises(PerturbationError):
        Perturbation("wiggle", K, 0.1)
    with pytest.raises(PerturbationError):
        Perturbation("bump-add", K, -0.1)
    with pytest.raises(PerturbationError):
        Perturbation("bump-add", K, 0.5, lipschitz=0.01).apply(disk_exact)
    with pytest.raises(PerturbationError):
        Perturbation("bump-add", Window((0, 0), (0.04, 0.04)), 0.1, margin_cells=2).apply(disk_exact)


def test_perturbation_signs(disk_exact):
    K = Window((-0.3, -0.3), (0.3, 0.3))
    up = Perturbation("bump-add", K, 0.02).apply(disk_exact).values - disk_exact.values
    down = Perturbation("bump-subtract", K, 0.02).apply(disk_exact).values - disk_exact.values
    dil = Perturbation("level-dilate", K, 0.02).apply(disk_exact).values - disk_exact.values
    assert up.min() >= 0 and down.max() <= 0 and dil.min() >= 0
    assert np.all(up[~K.mask(disk_exact.grid)] == 0)


def test_probe_table_csv(tmp_path, disk129):
    _, cont = disk129
    table = minimality_probe(cont.u, random_perturbations(cont.u, 4, seed=2))
    table.write_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "probe,kind,K,delta_J,tol,verdict" and len(lines) == 5


def test_probe_seed_reproducible(disk129):
    _, cont = disk129
    a = [p.describe() for p in random_perturbations(cont.u, 10, seed=4)]
    b = [p.describe() for p in random_perturbations(cont.u, 10, seed=4)]
    assert a == b


# -- outward minimality and calibration


def test_disk_dilations(disk_exact):
    rows = outward_area_minimality(disk_exact, 0.2, blisters=0)
    assert all(r.perimeter_e < r.perimeter_f for r in rows)
    r_t = math.sqrt(1 - 0.4)
    h = disk_exact.grid.h
    for k, r in enumerate(rows, start=1):
        # the dilation shifts (u - t)/|Du| = (r_t^2 - r^2)/(2r) by k h
        radius = k * h + math.sqrt((k * h) ** 2 + r_t ** 2)
        assert r.perimeter_f == pytest.approx(2 * math.pi * radius, rel=2e-3)


def test_torus_blisters(torus129):
    _, cont = torus129
    T = cont.u.values[cont.u.mask].max()
    rows = outward_area_minimality(cont.u, 0.3 * T, blisters=6, seed=2)
    assert all(r.passed for r in rows)


def test_identity_competitor_equality(disk_exact):
    E = level_set_competitor(disk_exact, 0.2)
    rows = outward_area_minimality(disk_exact, 0.2, competitors=[("same", E)])
    assert rows[0].perimeter_e == rows[0].perimeter_f
    res = calibration_check(disk_exact, 0.2, E)
    assert res.inequality_residual == 0.0 and res.passed


def test_exact_disk_calibration_field():
    vals = [annulus_field_residual(exact_disk(_disk(n)), FIELD_ANNULUS) for n in (65, 129, 257)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert vals[-1] <= C_FIELD * _disk(257).grid.h


def test_calibration_check_dilated(disk129):
    _, cont = disk129
    F = dilated_competitor(cont.u, 0.2, 2)
    assert calibration_check(cont.u, 0.2, F).passed


# -- submodularity and coarea


def _pairs(u, count, seed, size_cells=(6, 24)):
    out = []
    for p in random_perturbations(u, count, seed=seed, kinds=("random-lipschitz", "bump-add"),
                                  size_cells=size_cells):
        q = Perturbation("random-lipschitz", p.window, p.amplitude, seed=p.seed + 1)
        out.append((p.window, p.apply(u), q.apply(u)))
    return out


def test_function_submodularity(disk129):
    _, cont = disk129
    u = cont.u
    for K, v, w in _pairs(u, 20, seed=5):
        gap = submodularity_gap(u, v, w, K)
        tv = sum(functional_J(u, f, K, return_parts=True).total_variation for f in (v, w))
        assert abs(gap) <= C1 * u.grid.h * tv


def test_set_submodularity(disk129):
    _, cont = disk129
    u = cont.u
    rng = np.random.default_rng(9)
    t = 0.2
    base = level_set_competitor(u, t)
    K = base.window.shrink(-0.15)
    for k in range(6):
        ang = rng.uniform(0, 2 * np.pi)
        c = math.sqrt(1 - 2 * t) * np.array([math.cos(ang), math.sin(ang)])
        E = blister_competitor(u, t, c, rng.uniform(0.04, 0.1), K)
        F = dilated_competitor(u, t, rng.integers(1, 4), K)
        gap = set_submodularity_gap(u, E, F)
        per = sum(set_perimeter(X, u.grid) for X in (E, F, E.union(F), E.intersection(F)))
        assert gap <= C1 * u.grid.h * per


def test_coarea_consistency(disk129):
    _, cont = disk129
    u = cont.u
    eta = default_eta(u)
    checked = 0
    # resolved competitors only: supports of at least 8 cells and no new
    # critical points (perturbation slope below |Du| on K)
    for K, v, _ in _pairs(u, 12, seed=5, size_cells=(12, 24)):
        cells = K.mask(u.grid)
        slope = np.sqrt(sum(g * g for g in centered_gradient(v.values - u.values, u.grid)))
        if slope[cells].max() >= u.gradient_norm()[cells].min():
            continue
        parts = functional_J(u, v, K, eta, return_parts=True)
        vals = v.values[cells]
        tol = (probe_tolerance(u, v, K, eta)
               + set_tolerance(u, parts.total_variation,
                               (vals.max() - vals.min()) * parts.excluded_volume, eta))
        assert abs(parts.value - coarea_J(u, v, K, eta=eta)) <= tol
        checked += 1
    assert checked >= 6


@settings(max_examples=6, deadline=None)
@given(seed=st.integers(0, 1000), amp=st.floats(1e-3, 3e-2))
def test_bump_probes_property(disk129, seed, amp):
    _, cont = disk129
    u = cont.u
    p = random_perturbations(u, 1, seed=seed, kinds=("bump-add",))[0]
    for kind in ("bump-add", "bump-subtract", "level-dilate"):
        table = minimality_probe(u, [Perturbation(kind, p.window, amp)])
        assert table.passed


# -- uniqueness


def test_uniqueness_determinism():
    d = _disk(33)
    lad = EpsilonLadder.default_for(d.grid)
    a = epsilon_continuation(d, lad).u.values
    b = epsilon_continuation(d, lad).u.values
    assert np.abs(a - b)[d.mask].max() == 0.0
    r1 = uniqueness_two_route(d)
    r2 = uniqueness_two_route(d)
    assert r1.gap == r2.gap


def test_uniqueness_oracle_route():
    d = _disk(65)
    rep = uniqueness_two_route(d, route="oracle")
    assert rep.route_b == "radial-oracle"
    assert rep.gap <= 5 * d.h ** 2


def test_uniqueness_route_errors():
    s = ShapeSpec.rounded_box((0.8, 0.6))
    d = build_domain(s, GridSpec.around(s, 33))
    with pytest.raises(ConfigurationError):
        uniqueness_two_route(d, route="oracle")
    with pytest.raises(ConfigurationError):
        uniqueness_two_route(_disk(33), route="coin-flip")
