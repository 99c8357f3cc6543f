import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import exact_ball3, exact_disk
from mcfarrival.domain import GridSpec, ShapeSpec, build_domain
from mcfarrival.errors import ConfigurationError, SolverFailure
from mcfarrival.fields import ScalarField
from mcfarrival.radial import oracle_field, solve_radial
from mcfarrival.solver import (ContinuationStallWarning, EpsilonLadder, SolverParams,
                               dump_field, epsilon_continuation, gradient_sup, load_values,
                               solve_regularized)
from mcfarrival.stencil import StarOperator


def _disk(cells=65):
    s = ShapeSpec.ball(1.0, 2)
    return build_domain(s, GridSpec.around(s, cells))


def test_zero_field_residual_is_rhs():
    d = _disk(33)
    op = StarOperator.for_domain(d)
    for eps in (0.5, 0.1):
        res = op.residual(np.zeros(d.grid.shape), eps)
        assert np.allclose(res[d.mask], 1 / eps, rtol=0, atol=1e-12)


@pytest.mark.parametrize("variant", ["face", "cell"])
def test_jacobian_matches_finite_differences(variant):
    d = _disk(24)
    op = StarOperator.for_domain(d)
    rng = np.random.default_rng(1)
    u = np.where(d.mask, 0.5 - 0.5 * np.sum(d.grid.points() ** 2, -1), 0.0)
    u += np.where(d.mask, 0.01 * rng.standard_normal(u.shape), 0.0)
    jac = op.jacobian(u, 0.2, variant).toarray()
    dv = np.where(d.mask, rng.standard_normal(u.shape), 0.0)
    s = 1e-6
    fd = (op.residual(u + s * dv, 0.2, variant) - op.residual(u - s * dv, 0.2, variant)) / (2 * s)
    assert np.allclose(jac @ dv[d.mask], fd[d.mask], rtol=1e-5, atol=1e-5)


def test_eps_half_matches_oracle():
    d = _disk(65)
    f, rep = solve_regularized(d, 0.5)
    assert rep.converged
    ref = oracle_field(solve_radial(1.0, 1, 0.5), d)
    gap = np.abs(f.values - ref.values)[d.mask].max()
    assert gap <= 5 * d.h ** 2 + 1e-6


def test_disk_ladder_end_center_value(disk129_deep):
    d, cont = disk129_deep
    assert cont.u.values[d.mask].max() == pytest.approx(0.5, rel=0.02)


def test_ball_ladder_center_value(ball129_deep):
    d, cont = ball129_deep
    assert cont.u.values[d.mask].max() == pytest.approx(0.25, rel=0.02)


def test_torus_positive_max_and_cauchy(torus129):
    d, cont = torus129
    assert cont.u.values[d.mask].max() > 0
    dist = cont.cauchy_distances()
    # rungs with eps above the gradient scale of the tube are saturated,
    # so the distances decrease from their peak onward
    tail = dist[int(np.argmax(dist)):]
    assert len(tail) >= 3
    assert all(b < a for a, b in zip(tail, tail[1:]))
    assert not cont.stalled


def test_disk_error_fit_in_eps(disk129):
    """sup|u^eps - u| shrinks along the ladder and fits C eps + C' h^2."""
    d, cont = disk129
    exact = exact_disk(d)
    errs = np.array([np.abs(f.values - exact.values)[d.mask].max() for f in cont.fields])
    eps = np.array(cont.ladder.values)
    assert np.all(np.diff(errs) < 0)
    slope, icpt = np.polyfit(eps, errs, 1)
    assert slope > 0
    assert np.all(errs <= slope * eps + max(icpt, 0) + 1e-2 * errs)


def test_gradient_sup_exact_fields():
    d = _disk(129)
    assert abs(gradient_sup(exact_disk(d)) - 1.0) <= d.h ** 2
    s = ShapeSpec.ball(1.0, 3)
    d3 = build_domain(s, GridSpec.around(s, 129, mode="axisymmetric"))
    assert abs(gradient_sup(exact_ball3(d3)) - 0.5) <= d3.h ** 2
    assert gradient_sup(ScalarField(np.full(d.grid.shape, 3.0), d)) == 0.0


def test_ladder_gradient_bound(disk129, torus129):
    for _, cont in (disk129, torus129):
        g = [r.grad_sup for r in cont.reports]
        assert max(g) <= 1.05 * max(g[-3:])


def test_solutions_nonnegative(disk129, torus129):
    for d, cont in (disk129, torus129):
        for f in cont.fields:
            assert f.values[d.mask].min() >= 0


def test_variants_agree():
    d = _disk(65)
    a, _ = solve_regularized(d, 0.1)
    b, _ = solve_regularized(d, 0.1, params=SolverParams(variant="cell"))
    assert np.abs(a.values - b.values)[d.mask].max() < 5 * d.h ** 2


def test_failure_carries_history():
    d = _disk(33)
    with pytest.raises(SolverFailure) as info:
        solve_regularized(d, 0.05, params=SolverParams(max_iter=1, picard_max=0))
    assert len(info.value.residual_history) >= 1


def test_eps_out_of_range():
    with pytest.raises(ConfigurationError):
        solve_regularized(_disk(33), 0.0)


def test_ladder_parse_and_validation():
    lad = EpsilonLadder.parse("0.2:0.5:0.01")
    assert lad.values[0] == 0.2 and lad.values[-1] == pytest.approx(0.01)
    with pytest.raises(ConfigurationError):
        EpsilonLadder.parse("0.2-0.5")
    with pytest.raises(ConfigurationError):
        EpsilonLadder((0.1, 0.2))
    with pytest.raises(ConfigurationError):
        EpsilonLadder((1.5,))
    g = GridSpec.around(ShapeSpec.ball(1.0, 2), 65)
    assert EpsilonLadder.default_for(g).values[-1] == pytest.approx(2 * g.h)


def test_stall_warning_on_growing_distances(monkeypatch):
    import mcfarrival.solver as solver_mod

    d = _disk(33)
    calls = {"k": 0}
    real = solver_mod.solve_regularized

    def fake(domain, eps, prev, params, operator=None):
        f, rep = real(domain, eps, prev, params, operator=operator)
        calls["k"] += 1
        bumped = ScalarField(f.values * (1 + 0.1 * calls["k"] ** 2), f.domain)
        return bumped, rep

    monkeypatch.setattr(solver_mod, "solve_regularized", fake)
    with pytest.warns(ContinuationStallWarning):
        cont = epsilon_continuation(d, EpsilonLadder((0.4, 0.3, 0.2, 0.15)))
    assert cont.stalled


def test_field_dump_roundtrip(tmp_path):
    d = _disk(33)
    f = exact_disk(d)
    dump_field(f, tmp_path / "u", eps=0.1)
    assert np.array_equal(load_values(tmp_path / "u"), f.values)
    assert (tmp_path / "u.json").read_text().count('"row-major"') == 1


@settings(max_examples=20, deadline=None)
@given(e0=st.floats(0.05, 0.9), ratio=st.floats(0.2, 0.9), frac=st.floats(0.01, 0.9))
def test_geometric_ladder_properties(e0, ratio, frac):
    stop = e0 * frac
    lad = EpsilonLadder.geometric(e0, ratio, stop)
    v = np.array(lad.values)
    assert v[0] == e0 and v[-1] == pytest.approx(stop)
    assert np.all(np.diff(v) < 0)


@settings(max_examples=6, deadline=None)
@given(eps=st.floats(0.15, 0.8), scale=st.floats(0.5, 2.0))
def test_solution_independent_of_initial_guess(eps, scale):
    d = _disk(33)
    a, _ = solve_regularized(d, eps)
    init = ScalarField(scale * np.where(d.mask, d.distance(), 0.0), d)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        b, _ = solve_regularized(d, eps, init)
    assert np.abs(a.values - b.values)[d.mask].max() < 1e-7
