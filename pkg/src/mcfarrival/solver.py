"""Elliptic-regularization solver and epsilon continuation."""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse.linalg as spla

from .domain import ImplicitDomain
from .errors import ConfigurationError, MonotonicityViolation, SolverFailure
from .fields import ScalarField
from .stencil import StarOperator


class ContinuationStallWarning(UserWarning):
    """Cauchy distances along the ladder increased twice in a row."""


@dataclass(frozen=True)
class EpsilonLadder:
    """Strictly decreasing regularization parameters in (0, 1)."""

    values: tuple

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if not vals:
            raise ConfigurationError("epsilon ladder is empty")
        if any(not (0 < v < 1) for v in vals):
            raise ConfigurationError("every epsilon must lie in (0, 1)")
        if any(b >= a for a, b in zip(vals, vals[1:])):
            raise ConfigurationError("epsilon ladder must be strictly decreasing")

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)

    def __getitem__(self, k):
        return self.values[k]

    @classmethod
    def geometric(cls, start=0.2, ratio=0.5, stop=0.005):
        if not (0 < ratio < 1) or stop > start:
            raise ConfigurationError("geometric ladder needs 0 < ratio < 1 and stop <= start")
        vals = [start]
        while vals[-1] * ratio > stop * (1 + 1e-9):
            vals.append(vals[-1] * ratio)
        if vals[-1] > stop * (1 + 1e-9):
            vals.append(stop)
        return cls(tuple(vals))

    @classmethod
    def default_for(cls, grid, start=0.2, ratio=0.5, floor=0.005):
        """Geometric ladder from ``start`` down to max(floor, 2h)."""
        return cls.geometric(start, ratio, max(floor, 2 * grid.h))

    @classmethod
    def parse(cls, text: str):
        """Parse ``e0:ratio:emin``."""
        try:
            e0, ratio, emin = (float(v) for v in text.split(":"))
        except ValueError:
            raise ConfigurationError(f"ladder must be 'e0:ratio:emin', got {text!r}") from None
        return cls.geometric(e0, ratio, emin)


@dataclass
class SolverParams:
    tol: float = 1e-9
    tol_cut: float = 1e-6
    max_iter: int = 60
    armijo: float = 1e-4
    min_step: float = 2.0 ** -12
    picard_max: int = 300
    variant: str = "face"
    method: str = "newton"
    positivity_tol: float = 1e-8


@dataclass
class SolveReport:
    eps: float
    iterations: int = 0
    picard_iterations: int = 0
    residual_sup: float = float("nan")
    residual_sup_cut: float = float("nan")
    residual_l2: float = float("nan")
    grad_sup: float = float("nan")
    dist_prev: float | None = None
    wall_time: float = 0.0
    converged: bool = False
    history: list = field(default_factory=list)

    def to_dict(self, timing=False):
        out = {
            "eps": self.eps, "iterations": self.iterations,
            "picard_iterations": self.picard_iterations,
            "residual_sup": self.residual_sup, "residual_sup_cut": self.residual_sup_cut,
            "residual_l2": self.residual_l2, "grad_sup": self.grad_sup,
            "dist_prev": self.dist_prev, "converged": self.converged,
        }
        if timing:
            out["wall_time"] = self.wall_time
        return out


def gradient_sup(f: ScalarField) -> float:
    """Sup over interior cells of the centered-difference gradient magnitude."""
    return float(f.gradient_norm()[f.mask].max())


def _norms(op, res, vol):
    inner = op.mask & ~op.cut
    sup = float(np.abs(res[inner]).max()) if inner.any() else 0.0
    sup_cut = float(np.abs(res[op.cut]).max()) if op.cut.any() else 0.0
    l2 = float(np.sqrt(np.sum(res[op.mask] ** 2 * vol[op.mask])))
    return sup, sup_cut, l2


def _merit(res, mask):
    return float(np.sqrt(np.sum(res[mask] ** 2)))


def initial_guess(domain: ImplicitDomain, scale=1.0) -> np.ndarray:
    """``scale * dist(x, boundary)`` on interior cells."""
    return np.where(domain.mask, scale * np.maximum(domain.distance(), 0.0), 0.0)


def _picard(op, u, eps, params, report, target):
    """Lagged-coefficient iterations; returns the last iterate."""
    best = _merit(op.residual(u, eps, params.variant), op.mask)
    worse = 0
    for _ in range(params.picard_max):
        frozen = op.frozen_coefficients(u, eps, params.variant)
        jac = op.jacobian(u, eps, params.variant, frozen)
        rhs0 = op.residual(np.zeros_like(u), eps, params.variant, frozen)[op.mask]
        u = op.scatter(spla.spsolve(jac.tocsc(), -rhs0))
        report.picard_iterations += 1
        res = op.residual(u, eps, params.variant)
        m = _merit(res, op.mask)
        report.history.append(("picard", m))
        if m <= target:
            break
        if m > best * (1 - 1e-3):
            worse += 1
            if worse >= 3:
                break
        else:
            worse = 0
        best = min(best, m)
    return u


def solve_regularized(domain: ImplicitDomain, eps: float, init: ScalarField | None = None,
                      params: SolverParams | None = None, operator: StarOperator | None = None):
    """Solve the regularized equation on ``domain`` for one ``eps``.

    Damped Newton with Armijo backtracking on the residual 2-norm, exact
    Jacobian, sparse direct linear solves. If Newton stalls during its
    first three steps, lagged Picard iterations take over before Newton
    resumes. ``params.method = "picard"`` runs Picard first by design.

    Returns (field, report). Raises SolverFailure or MonotonicityViolation.
    """
    params = params or SolverParams()
    if not (0 < eps < 1):
        raise ConfigurationError("eps must lie in (0, 1)")
    op = operator or StarOperator.for_domain(domain)
    vol = domain.grid.cell_volumes()
    t0 = time.perf_counter()
    report = SolveReport(eps=float(eps))
    if init is None:
        u = initial_guess(domain)
    else:
        u = np.where(domain.mask, init.values, 0.0)
    variant = params.variant
    if params.method == "picard":
        u = _picard(op, u, eps, params, report, target=0.0)
    res = op.residual(u, eps, variant)
    merit = _merit(res, op.mask)
    report.history.append(("start", merit))
    picard_used = params.method == "picard"
    for it in range(params.max_iter + 1):
        sup, sup_cut, l2 = _norms(op, res, vol)
        if sup <= params.tol and sup_cut <= params.tol_cut:
            report.converged = True
            break
        if it == params.max_iter:
            break
        jac = op.jacobian(u, eps, variant)
        try:
            delta = op.scatter(spla.spsolve(jac.tocsc(), -res[op.mask]))
        except RuntimeError as exc:  # singular factorization
            raise SolverFailure(f"linear solve failed: {exc}", [m for _, m in report.history])
        if not np.all(np.isfinite(delta)):
            raise SolverFailure("non-finite Newton step", [m for _, m in report.history])
        step = 1.0
        while True:
            trial = u + step * delta
            res_t = op.residual(trial, eps, variant)
            merit_t = _merit(res_t, op.mask)
            if merit_t <= (1 - params.armijo * step) * merit:
                break
            step *= 0.5
            if step < params.min_step:
                break
        report.iterations += 1
        if step < params.min_step:
            if it < 3 and not picard_used:
                picard_used = True
                u = _picard(op, u, eps, params, report, target=params.tol)
                res = op.residual(u, eps, variant)
                merit = _merit(res, op.mask)
                continue
            if merit_t >= merit:
                raise SolverFailure(
                    f"Newton stalled at eps={eps:g} (residual {merit:.3e})",
                    [m for _, m in report.history])
        u, res, merit = trial, res_t, merit_t
        report.history.append(("newton", merit))
    report.residual_sup, report.residual_sup_cut, report.residual_l2 = _norms(op, res, vol)
    if not report.converged:
        raise SolverFailure(
            f"no convergence at eps={eps:g} after {report.iterations} Newton steps "
            f"(sup residual {report.residual_sup:.3e})", [m for _, m in report.history])
    f = ScalarField.from_interior(domain, u)
    umin = float(u[domain.mask].min())
    if umin < -params.positivity_tol * max(1.0, f.max()):
        raise MonotonicityViolation(f"u^eps reaches {umin:.3e} inside the domain at eps={eps:g}")
    report.grad_sup = gradient_sup(f)
    report.wall_time = time.perf_counter() - t0
    return f, report


@dataclass
class Continuation:
    """Outcome of an epsilon ladder: per-rung fields and reports, final field ``u``."""

    ladder: EpsilonLadder
    fields: list
    reports: list
    stalled: bool = False

    @property
    def u(self) -> ScalarField:
        return self.fields[-1]

    def __iter__(self):
        return iter((self.fields, self.reports, self.u))

    def cauchy_distances(self):
        return [r.dist_prev for r in self.reports[1:]]


def epsilon_continuation(domain: ImplicitDomain, ladder: EpsilonLadder,
                         params: SolverParams | None = None) -> Continuation:
    """Solve each rung warm-started from the previous one."""
    params = params or SolverParams()
    op = StarOperator.for_domain(domain)
    fields, reports = [], []
    prev = None
    for k, eps in enumerate(ladder):
        try:
            f, rep = solve_regularized(domain, eps, prev, params, operator=op)
        except SolverFailure as exc:
            exc.rung = k
            raise
        if prev is not None:
            rep.dist_prev = float(np.abs(f.values - prev.values)[domain.mask].max())
        fields.append(f)
        reports.append(rep)
        prev = f
    dists = [r.dist_prev for r in reports[1:]]
    stalled = any(b > a and c > b for a, b, c in zip(dists, dists[1:], dists[2:]))
    if stalled:
        warnings.warn("Cauchy distances increased twice in a row along the ladder",
                      ContinuationStallWarning, stacklevel=2)
    return Continuation(ladder, fields, reports, stalled)


def dump_field(f: ScalarField, path, eps=None):
    """Write ``path.bin`` (float64, row-major, axis order x, y, z) and ``path.json``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(f.values, dtype="<f8").tofile(path.with_suffix(".bin"))
    meta = {
        "dims": list(f.grid.shape), "spacing": list(f.grid.spacing),
        "lower": list(f.grid.lower), "mode": f.grid.mode, "eps": eps,
        "dtype": "float64-le", "ordering": "row-major",
        "axes": ["rho", "z"] if f.grid.mode == "axisymmetric" else ["x", "y", "z"][: f.grid.ndim],
    }
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_values(path) -> np.ndarray:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    return np.fromfile(path.with_suffix(".bin"), dtype="<f8").reshape(meta["dims"])
