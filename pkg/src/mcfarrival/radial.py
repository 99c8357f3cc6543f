"""Radial shooting oracle and closed-form shrinking spheres.

For a ball of radius R in R^{n+1} the regularized equation reduces to an
ODE for p = u'(r):

    p' = -((eps^2 + p^2) / eps^2) * (1 + n p / r),        u' = p,

with p(0) = 0 and u(R) = 0. Near the center the regular solution is
p = -r/(n+1) + O(r^3). This module integrates the system with a
fixed-step classical Runge-Kutta scheme and step halving, and shoots on
u(0). It shares no code with the grid solver.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .errors import OracleError

SPHERE_CONSTANT = {1: 2 * math.pi, 2: 4 * math.pi}


@dataclass
class RadialProfile:
    """Samples of the radial solution on [r0, R]."""

    r: np.ndarray
    u: np.ndarray
    du: np.ndarray
    eps: float
    n: int
    R: float
    steps: int
    error_estimate: float

    @property
    def center_value(self) -> float:
        # u(r0) differs from u(0) by r0^2 / (2(n+1)), below round-off for r0 = 1e-6 R
        return float(self.u[0] + self.r[0] ** 2 / (2 * (self.n + 1)))

    def __call__(self, radius):
        """Interpolated u at the given radii (cubic Hermite in r)."""
        radius = np.asarray(radius, dtype=float)
        spline = CubicHermiteSpline(self.r, self.u, self.du)
        inner = radius < self.r[0]
        out = spline(np.clip(radius, self.r[0], self.R))
        if np.any(inner):
            out = np.where(inner, self.center_value - radius ** 2 / (2 * (self.n + 1)), out)
        return out

    def residual(self) -> np.ndarray:
        """|F' + n F / r + 1/W| at interior samples, F = u'/W (fourth-order differences)."""
        w = np.sqrt(self.eps ** 2 + self.du ** 2)
        flux = self.du / w
        dr = self.r[1] - self.r[0]
        dflux = (-flux[4:] + 8 * flux[3:-1] - 8 * flux[1:-3] + flux[:-4]) / (12 * dr)
        rr = self.r[2:-2]
        return np.abs(dflux + self.n * flux[2:-2] / rr + 1.0 / w[2:-2])


def _integrate(R, n, eps, steps, keep_every=1):
    """RK4 for (p, w) with w' = p, w(r0) = 0; returns samples of r, w, p.

    The equation does not involve u itself, so u = u(0) + w for any
    shooting value u(0).
    """
    r0 = 1e-6 * R
    h = (R - r0) / steps
    inv_e2 = 1.0 / (eps * eps)

    def slope(r, p):
        return -(eps * eps + p * p) * inv_e2 * (1.0 + n * p / r)

    r = r0
    p = -r0 / (n + 1)
    w = -r0 * r0 / (2 * (n + 1))
    rs, ws, ps = [r], [w], [p]
    for i in range(1, steps + 1):
        k1 = slope(r, p)
        p2 = p + 0.5 * h * k1
        k2 = slope(r + 0.5 * h, p2)
        p3 = p + 0.5 * h * k2
        k3 = slope(r + 0.5 * h, p3)
        p4 = p + h * k3
        k4 = slope(r + h, p4)
        w += h * (p + 2 * p2 + 2 * p3 + p4) / 6.0
        p += h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        r = r0 + i * h
        if not math.isfinite(p):
            raise OracleError(f"radial integration blew up at r={r:.3g}")
        if i % keep_every == 0:
            rs.append(r)
            ws.append(w)
            ps.append(p)
    return np.array(rs), np.array(ws), np.array(ps)


def _base_steps(R, n, eps):
    # keep lambda * h near 1/4, lambda ~ 1 / (n eps^2) being the stiff rate
    return int(max(2000, math.ceil(4 * R * R / (n * eps * eps))))


def _shoot(mismatch, lo, hi, brackets, bisections=8, secants=20, ftol=1e-15):
    f_lo, f_hi = mismatch(lo), mismatch(hi)
    brackets.append((lo, hi, f_lo, f_hi))
    if f_lo * f_hi > 0:
        raise OracleError("shooting bracket does not contain a root", brackets)
    for _ in range(bisections):
        mid = 0.5 * (lo + hi)
        f_mid = mismatch(mid)
        if f_lo * f_mid <= 0:
            hi, f_hi = mid, f_mid
        else:
            lo, f_lo = mid, f_mid
        brackets.append((lo, hi, f_lo, f_hi))
    a, fa, b, fb = lo, f_lo, hi, f_hi
    for _ in range(secants):
        if abs(fb) <= ftol or fb == fa:
            break
        c = b - fb * (b - a) / (fb - fa)
        a, fa, b, fb = b, fb, c, mismatch(c)
    return b


def solve_radial(R=1.0, n=1, eps=0.1, tol=1e-10, residual_tol=1e-6, max_halvings=8):
    """Radial regularized profile on a ball by shooting on u(0).

    The step count doubles until successive center values differ by less
    than ``tol`` and the finite-difference ODE residual of the sampled
    profile is below ``residual_tol``. Each shot brackets u(0) in
    [0, R^2], bisects and then switches to secant updates on u(R).
    """
    if R <= 0 or n not in (1, 2) or not (0 < eps < 1):
        raise OracleError("solve_radial needs R > 0, n in {1, 2}, 0 < eps < 1")
    steps = _base_steps(R, n, eps)
    brackets = []
    previous = None
    for _ in range(max_halvings + 1):
        r, w, p = _integrate(R, n, eps, steps)
        u0 = _shoot(lambda c: c + w[-1], 0.0, R * R, brackets)
        prof = RadialProfile(r, u0 + w, p, float(eps), int(n), float(R), steps,
                             abs(u0 - previous) if previous is not None else float("inf"))
        if prof.error_estimate < tol and prof.residual().max() <= residual_tol:
            return prof
        previous = u0
        steps *= 2
    raise OracleError(f"step halving did not settle below tol={tol:g}", brackets)


def extrapolate_center(R=1.0, n=1, eps_values=(0.02, 0.01, 0.005), tol=1e-10):
    """Polynomial extrapolation of u^eps(0) to eps -> 0 (degree len - 1).

    Returns (limit, sampled center values).
    """
    eps = np.asarray(eps_values, dtype=float)
    vals = np.array([solve_radial(R, n, e, tol).center_value for e in eps])
    coef = np.polyfit(eps, vals, len(eps) - 1)
    return float(np.polyval(coef, 0.0)), vals


def exact_ball_arrival(R, n, x):
    """Arrival time (R^2 - |x|^2) / (2n) of the shrinking sphere."""
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, axis=-1) if x.ndim else x * x
    if np.any(r2 > R * R * (1 + 1e-12)):
        raise ValueError("point lies outside the ball")
    return (R * R - r2) / (2 * n)


def sphere_flow_quantities(R, n, t):
    """(radius, area, integral of H^2 over the sphere) at time t."""
    T = R * R / (2 * n)
    if not (0 <= t < T):
        raise ValueError(f"t must lie in [0, {T:g})")
    r = math.sqrt(R * R - 2 * n * t)
    area = SPHERE_CONSTANT[n] * r ** n
    return r, area, (n / r) ** 2 * area


def oracle_field(profile: RadialProfile, domain):
    """Sample a radial profile on a ball domain (exterior cells get u(R) extension)."""
    from .fields import ScalarField

    pts = domain.grid.points()
    center = domain.center
    r = np.sqrt(np.sum((pts - center) ** 2, axis=-1))
    inside = r <= profile.R
    vals = np.where(inside, profile(np.minimum(r, profile.R)),
                    profile.du[-1] * (r - profile.R))
    return ScalarField(vals, domain)


def write_oracle_table(path, rows):
    """CSV with columns eps, R, n, u0, residual."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eps", "R", "n", "u0", "residual"])
        for row in rows:
            w.writerow([format(float(row[0]), ".17g"), format(float(row[1]), ".17g"), int(row[2]),
                        format(float(row[3]), ".17g"), format(float(row[4]), ".17g")])


def oracle_rows(R, n, eps_values, tol=1e-10):
    rows = []
    for e in eps_values:
        prof = solve_radial(R, n, e, tol)
        res = prof.residual()
        rows.append((e, R, n, prof.center_value, float(res.max())))
    return rows
