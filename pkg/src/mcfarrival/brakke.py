"""Flow identities checked on a computed arrival time.

* the integrated area identity mu_{t2}(phi) - mu_{t1}(phi) =
  int_{t1}^{t2} int (-phi |H|^2 + <grad phi, H>) dmu_t dt;
* continuity of t -> mu_t(phi) up to extinction;
* the translating-graph identity U(x, z) = u(x) - eps z.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, PlumbingError, WindowError
from .fields import ScalarField
from .measures import (TestFunction, curvature_at, default_eta, gradient_interpolator,
                       measure_mu, _contour_elements)
from .stencil import StarOperator


class DegenerateWindowWarning(UserWarning):
    """The time window reaches the extinction point where phi is positive."""


@dataclass(frozen=True)
class Extinction:
    value: float
    index: tuple
    point: tuple


def extinction_time(u: ScalarField) -> Extinction:
    """T = max of u over interior cells, with the argmax cell and its center."""
    masked = np.where(u.mask, u.values, -np.inf)
    idx = np.unravel_index(int(np.argmax(masked)), masked.shape)
    pt = u.grid.points()[idx]
    return Extinction(float(masked[idx]), tuple(int(i) for i in idx),
                      tuple(float(x) for x in pt))


@dataclass
class BrakkeResidualReport:
    t1: float
    t2: float
    phi: str
    lhs: float
    rhs: float
    residual: float
    rel_residual: float
    nodes: int
    eta: float
    degenerate_weight: float = 0.0
    excluded_bound: float = 0.0
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"t1": self.t1, "t2": self.t2, "phi": self.phi, "lhs": self.lhs,
                "rhs": self.rhs, "residual": self.residual,
                "rel_residual": self.rel_residual, "nodes": self.nodes, "eta": self.eta,
                "degenerate_weight": self.degenerate_weight,
                "excluded_bound": self.excluded_bound, "warnings": list(self.warnings)}


def _integrand(u, t, phi, eta, interp):
    """(value, degenerate weight, bound on the excluded part) at level t."""
    el = _contour_elements(u, t)
    if not len(el):
        return 0.0, 0.0, 0.0
    h, bad = curvature_at(u, el.points, eta, interp)
    ph = phi(el.points)
    gp = phi.gradient(el.points)
    dens = -ph * np.sum(h * h, axis=1) + np.sum(gp * h, axis=1)
    good = ~bad
    value = float(np.dot(dens[good], el.weights[good]))
    wbad = float(el.weights[bad].sum())
    bound = float(np.dot(np.abs(ph[bad]) / eta ** 2 + np.linalg.norm(gp[bad], axis=1) / eta,
                         el.weights[bad])) if bad.any() else 0.0
    return value, wbad, bound


def brakke_residual(u: ScalarField, phi: TestFunction, t1: float, t2: float,
                    eta: float | None = None, nodes_per_unit: int = 32,
                    rtol: float = 1e-5, max_doublings: int = 8,
                    force: bool = False) -> BrakkeResidualReport:
    """Compare the change of mu_t(phi) over [t1, t2] with its curvature integral.

    The time integral uses the composite midpoint rule with at least
    ``nodes_per_unit`` nodes per unit of (t2 - t1)/T, doubled until the
    value changes by less than ``0.5 * rtol * |RHS|``. Windows with
    t2 > 0.95 T are refused unless ``force`` is set.
    """
    T = extinction_time(u)
    if not (0 <= t1 < t2):
        raise ConfigurationError("need 0 <= t1 < t2")
    if t2 > 0.95 * T.value and not force:
        raise WindowError(f"t2={t2:g} exceeds 0.95 T = {0.95 * T.value:g}; pass force=True")
    eta = default_eta(u) if eta is None else float(eta)
    interp = gradient_interpolator(u)
    notes = []
    lhs = measure_mu(u, t2, phi) - measure_mu(u, t1, phi)
    m = max(1, math.ceil(nodes_per_unit * (t2 - t1) / T.value))
    prev = None
    for _ in range(max_doublings + 1):
        dt = (t2 - t1) / m
        vals = [_integrand(u, t1 + (k + 0.5) * dt, phi, eta, interp) for k in range(m)]
        rhs = dt * sum(v[0] for v in vals)
        if prev is not None and abs(rhs - prev) < 0.5 * rtol * max(abs(rhs), 1e-12):
            break
        prev = rhs
        m *= 2
    else:
        notes.append("time quadrature did not settle")
    wbad = dt * sum(v[1] for v in vals)
    bound = dt * sum(v[2] for v in vals)
    if t2 >= T.value and float(phi(np.asarray([T.point]))[0]) > 0:
        notes.append("window reaches the extinction point")
        warnings.warn("Brakke window reaches the extinction point", DegenerateWindowWarning,
                      stacklevel=2)
    res = lhs - rhs
    rel = abs(res) / max(abs(lhs), abs(rhs), 1e-12)
    return BrakkeResidualReport(float(t1), float(t2), phi.identifier, float(lhs), float(rhs),
                                float(res), float(rel), m, eta, wbad, bound, notes)


# ----------------------------------------------------------------------


@dataclass
class MassDropReport:
    phi: str
    times: list
    mu: list
    max_jump: float
    argmax_t: float
    tail_value: float
    tail_ratio: float
    singular_time: float | None
    bisection: list = field(default_factory=list)
    trend: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"phi": self.phi, "max_jump": self.max_jump, "argmax_t": self.argmax_t,
                "tail_value": self.tail_value, "tail_ratio": self.tail_ratio,
                "singular_time": self.singular_time, "bisection": self.bisection,
                "trend": self.trend, "t_count": len(self.times)}


def singular_time_estimate(u: ScalarField, eta: float | None = None):
    """Median of u over the cluster of cells with |Du| < eta (None if empty)."""
    eta = default_eta(u) if eta is None else eta
    deg = (u.gradient_norm() < eta) & u.mask
    if not deg.any():
        return None
    return float(np.median(u.values[deg]))


def max_adjacent_jump(times, values):
    v = np.asarray(values, float)
    if len(v) < 2:
        return 0.0, float(times[0]) if len(times) else 0.0
    jumps = np.abs(np.diff(v))
    k = int(np.argmax(jumps))
    return float(jumps[k]), float(times[k])


def mass_drop_scan(u: ScalarField, phi: TestFunction, t_count: int = 64,
                   bisections: int = 6, tail_fraction: float = 0.98) -> MassDropReport:
    """Sample mu_t(phi) on a uniform grid of [0, T] and locate the largest jump.

    When the degenerate-gradient cluster points to a singular time more
    than one step before T, two points straddling it are added. The largest jump is then
    bisected ``bisections`` times; the sequence of sub-interval jumps is
    recorded (it shrinks when mu is continuous there).
    """
    T = extinction_time(u).value
    times = list(np.linspace(0.0, T, t_count))
    ts = singular_time_estimate(u)
    dt = T / (t_count - 1)
    # a singular time within one step of T is the extinction itself
    if ts is not None and 0 < ts < T - dt:
        times += [max(ts - 0.25 * dt, 0.0), ts + 0.25 * dt]
    times = sorted(set(float(t) for t in times))
    mu = [measure_mu(u, t, phi) for t in times]
    jump, at = max_adjacent_jump(times, mu)
    k = times.index(at)
    a, b = times[k], times[k + 1]
    fa, fb = mu[k], mu[k + 1]
    seq = []
    for _ in range(bisections):
        c = 0.5 * (a + b)
        fc = measure_mu(u, c, phi)
        if abs(fc - fa) >= abs(fb - fc):
            b, fb = c, fc
        else:
            a, fa = c, fc
        seq.append({"a": a, "b": b, "jump": abs(fb - fa)})
    mu0 = mu[0]
    tail = measure_mu(u, tail_fraction * T, phi)
    ratio = tail / mu0 if mu0 > 0 else 0.0
    return MassDropReport(phi.identifier, times, mu, jump, at, float(tail), float(ratio),
                          ts, seq)


# ----------------------------------------------------------------------


@dataclass(frozen=True)
class TranslatingGraphReport:
    eps: float
    lifted_sup: float
    regularized_sup: float
    mismatch: float

    def to_dict(self) -> dict:
        return {"eps": self.eps, "lifted_sup": self.lifted_sup,
                "regularized_sup": self.regularized_sup, "mismatch": self.mismatch}


def translating_graph_residual(u_eps: ScalarField, eps: float, operator: StarOperator | None = None,
                               variant: str = "face", dz: float = 1.0,
                               tol: float = 1e-8) -> TranslatingGraphReport:
    """Residual of the degenerate equation for U = u^eps(x) - eps z on a slab.

    The lifted grid has three z-layers; the middle one is compared cell by
    cell with the regularized residual of u^eps.
    """
    op = operator or StarOperator.for_domain(u_eps.domain)
    base = np.where(op.mask, u_eps.values, 0.0)
    z = (np.arange(3) - 1.0) * dz
    lifted = base[..., None] - eps * z
    lifted = np.where(op.mask[..., None], lifted, 0.0)
    lop = op.lifted(layers=3, dz=dz)
    lop.dirichlet = np.broadcast_to(-eps * z, lifted.shape)
    r_lift = lop.residual(lifted, 0.0, variant)[..., 1]
    r_reg = op.residual(base, eps, variant)
    mism = float(np.abs(r_lift - r_reg)[op.mask].max())
    rep = TranslatingGraphReport(float(eps), float(np.abs(r_lift[op.mask]).max()),
                                 float(np.abs(r_reg[op.mask]).max()), mism)
    if mism > tol:
        raise PlumbingError(f"lifted residual differs from the regularized one by {mism:.3e}")
    return rep
