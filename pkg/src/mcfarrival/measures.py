"""Level sets of the arrival time and the measures built from them.

Level sets {u = t} come from marching squares / cubes. The area measure
mu_t(phi) is integrated two ways: element-midpoint quadrature on the
contour, and a slab-averaged coarea estimate
(1 / 2 delta) * integral over {|u - t| < delta} of phi |Du|. The inverse
gradient measures integrate 1 / sqrt(eps^2 + |Du|^2) over regions.

In axisymmetric mode test functions are evaluated in (rho, z)
coordinates and stand for rotation-invariant functions in R^3.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .contour import Elements, extract
from .errors import ConfigurationError, EmptySlabError
from .fields import ScalarField, centered_gradient


class DegenerateLevelWarning(UserWarning):
    """A requested level has an empty contour."""


# ----------------------------------------------------------------------
# test functions


def _smoothstep(s):
    """C^2 quintic ramp: 0 for s <= 0, 1 for s >= 1."""
    s = np.clip(s, 0.0, 1.0)
    return s ** 3 * (10 - 15 * s + 6 * s * s)


def _smoothstep_prime(s):
    inside = (s > 0) & (s < 1)
    s = np.clip(s, 0.0, 1.0)
    return np.where(inside, 30 * s * s * (1 - s) ** 2, 0.0)


@dataclass(frozen=True)
class TestFunction:
    """Compactly supported C^2 test function on a box.

    kinds:
      ``one-on-box``  equals ``scale`` on the box shrunk by ``ramp`` and
                      falls to 0 at the box faces through a quintic ramp;
      ``bump``        ``scale * prod (1 - s_i^2)^3`` with s_i the scaled
                      offset from the box center;
      ``shifted-bump`` a bump whose box is translated by ``shift``.
    """

    __test__ = False  # not a pytest class

    kind: str
    lower: tuple
    upper: tuple
    ramp: float = 0.1
    scale: float = 1.0
    shift: tuple = ()
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("one-on-box", "bump", "shifted-bump"):
            raise ConfigurationError(f"unknown test function kind {self.kind!r}")
        lo = np.asarray(self.lower, float)
        hi = np.asarray(self.upper, float)
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise ConfigurationError("test function box needs lower < upper")
        if self.kind == "one-on-box" and np.any(hi - lo <= 2 * self.ramp):
            raise ConfigurationError("ramp too wide for the box")
        if self.kind == "shifted-bump" and len(self.shift) != len(self.lower):
            raise ConfigurationError("shifted-bump needs a shift vector")

    @property
    def box(self):
        lo = np.asarray(self.lower, float)
        hi = np.asarray(self.upper, float)
        if self.kind == "shifted-bump":
            s = np.asarray(self.shift, float)
            lo, hi = lo + s, hi + s
        return lo, hi

    @property
    def identifier(self) -> str:
        return self.name or self.kind

    def _factors(self, points):
        lo, hi = self.box
        x = np.asarray(points, float)
        if self.kind == "one-on-box":
            a = (x - lo) / self.ramp
            b = (hi - x) / self.ramp
            f = _smoothstep(a) * _smoothstep(b)
            df = (_smoothstep_prime(a) * _smoothstep(b)
                  - _smoothstep(a) * _smoothstep_prime(b)) / self.ramp
            return f, df
        c = 0.5 * (lo + hi)
        r = 0.5 * (hi - lo)
        s = (x - c) / r
        inside = np.abs(s) < 1
        q = np.where(inside, 1 - s * s, 0.0)
        f = q ** 3
        df = np.where(inside, -6 * s * q * q / r, 0.0)
        return f, df

    def __call__(self, points) -> np.ndarray:
        f, _ = self._factors(points)
        return self.scale * np.prod(f, axis=-1)

    def gradient(self, points) -> np.ndarray:
        f, df = self._factors(points)
        d = f.shape[-1]
        out = np.empty(f.shape)
        for a in range(d):
            others = np.prod(np.delete(f, a, axis=-1), axis=-1) if d > 1 else 1.0
            out[..., a] = df[..., a] * others
        return self.scale * out

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lower": list(self.lower), "upper": list(self.upper),
                "ramp": self.ramp, "scale": self.scale, "shift": list(self.shift),
                "name": self.identifier}


def phi_catalog(name: str, domain) -> TestFunction:
    """Named test functions sized to a domain.

    ``one``: 1 on a box containing the closed domain (gradient vanishes on it);
    ``bump``: bump centered on the domain; ``shifted-bump``: bump moved
    toward +x_1 (toward the tube in axisymmetric torus runs); ``zero``.
    """
    grid = domain.grid
    lo = np.asarray(grid.lower, float)
    hi = np.asarray(grid.upper, float)
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    if name in ("one", "zero"):
        ramp = 0.25 * float(np.min(half))
        lower = lo - 2 * ramp
        upper = hi + 2 * ramp
        if grid.mode == "axisymmetric":
            lower[0] = -upper[0]
        return TestFunction("one-on-box", tuple(lower), tuple(upper), ramp,
                            0.0 if name == "zero" else 1.0, name=name)
    if name == "bump":
        c = np.asarray(domain.center, float)
        if grid.mode == "axisymmetric":
            c = np.array([0.0, c[-1]])
        return TestFunction("bump", tuple(c - half), tuple(c + half), name=name)
    if name == "shifted-bump":
        c = np.asarray(domain.center, float)
        if grid.mode == "axisymmetric":
            c = np.array([0.0, c[-1]])
        shift = np.zeros(grid.ndim)
        shift[0] = 0.5 * half[0]
        return TestFunction("shifted-bump", tuple(c - 0.75 * half), tuple(c + 0.75 * half),
                            shift=tuple(shift), name=name)
    raise ConfigurationError(f"unknown test function {name!r}")


# ----------------------------------------------------------------------
# gradients and curvature


def gradient_interpolator(u: ScalarField):
    """Linear interpolant of the centered-difference gradient at arbitrary points."""
    axes = u.grid.axes()
    grads = centered_gradient(u.values, u.grid)
    stacked = np.stack(grads, axis=-1)
    interp = RegularGridInterpolator(axes, stacked, bounds_error=False, fill_value=None)
    return interp


def default_eta(u: ScalarField) -> float:
    """2h times the median interior |Du|."""
    g = u.gradient_norm()[u.mask]
    return float(2 * u.grid.h * np.median(g))


@dataclass
class CurvatureField:
    """Cellwise H = Du / max(|Du|, eta)^2 with the degenerate cells flagged."""

    components: list
    degenerate: np.ndarray
    eta: float

    def magnitude(self) -> np.ndarray:
        return np.sqrt(sum(c * c for c in self.components))


def mean_curvature_field(u: ScalarField, eta: float | None = None) -> CurvatureField:
    """Mean curvature vector of the level sets of an arrival time."""
    eta = default_eta(u) if eta is None else float(eta)
    if eta <= 0:
        raise ConfigurationError("gradient floor eta must be positive")
    g = u.gradient()
    norm = np.sqrt(sum(c * c for c in g))
    floor = np.maximum(norm, eta) ** 2
    return CurvatureField([c / floor for c in g], (norm < eta) & u.mask, eta)


def curvature_at(u: ScalarField, points, eta: float, interp=None):
    """H at points from the interpolated gradient; also returns the degenerate flags."""
    interp = interp or gradient_interpolator(u)
    g = interp(points)
    norm = np.linalg.norm(g, axis=-1)
    h = g / (np.maximum(norm, eta) ** 2)[:, None]
    return h, norm < eta


# ----------------------------------------------------------------------
# level sets


@dataclass
class LevelSetContour:
    """Contour elements of {u = t} with area weights and unit normals -Du/|Du|."""

    t: float
    elements: Elements
    normals: np.ndarray
    ndim: int

    @property
    def total(self) -> float:
        return self.elements.total

    @property
    def empty(self) -> bool:
        return len(self.elements) == 0

    def geometric_normals(self) -> np.ndarray:
        """Unit normals of the elements, oriented like ``normals``."""
        v = self.elements.vertices
        if self.ndim == 2:
            d = v[:, 1] - v[:, 0]
            nrm = np.stack([d[:, 1], -d[:, 0]], axis=1)
        else:
            nrm = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        nrm /= np.linalg.norm(nrm, axis=1)[:, None]
        flip = np.sum(nrm * self.normals, axis=1) < 0
        nrm[flip] *= -1
        return nrm

    def write(self, path):
        """CSV polyline segments (2D grids) or Wavefront OBJ triangles (3D)."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        v = self.elements.vertices
        if self.ndim == 2:
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["x0", "y0", "x1", "y1", "weight"])
                for seg, wt in zip(v, self.elements.weights):
                    w.writerow([f"{seg[0, 0]:.17g}", f"{seg[0, 1]:.17g}",
                                f"{seg[1, 0]:.17g}", f"{seg[1, 1]:.17g}", f"{wt:.17g}"])
        else:
            with open(path, "w") as fh:
                fh.write(f"# level t = {self.t:.17g}\n")
                for tri in v:
                    for p in tri:
                        fh.write(f"v {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
                for k in range(len(v)):
                    fh.write(f"f {3 * k + 1} {3 * k + 2} {3 * k + 3}\n")


def _contour_elements(u: ScalarField, t: float, dual=False) -> Elements:
    if t == 0:
        return extract(u.domain.psi, 0.0, u.grid, dual)
    return extract(u.values, t, u.grid, dual)


def extract_level_set(u: ScalarField, t: float, dual: bool = False) -> LevelSetContour:
    """Contour of {u = t}; t = 0 uses the exact boundary {psi = 0}.

    Levels outside (0, max u) give an empty contour and a warning.
    """
    t = float(t)
    if t < 0 or t >= u.max():
        warnings.warn(f"level t={t:g} outside [0, max u); empty contour",
                      DegenerateLevelWarning, stacklevel=2)
        k = u.grid.ndim
        return LevelSetContour(t, Elements(np.zeros((0, k, k)), np.zeros((0, k)), np.zeros(0)),
                               np.zeros((0, k)), k)
    el = _contour_elements(u, t, dual)
    if t == 0:
        g = RegularGridInterpolator(u.grid.axes(), np.stack(
            centered_gradient(u.domain.psi, u.grid), axis=-1),
            bounds_error=False, fill_value=None)(el.points)
        nu = g
    else:
        nu = -gradient_interpolator(u)(el.points)
    norm = np.linalg.norm(nu, axis=1)
    norm[norm == 0] = 1.0
    return LevelSetContour(t, el, nu / norm[:, None], u.grid.ndim)


def measure_mu(u: ScalarField, t: float, phi: TestFunction, dual: bool = False) -> float:
    """Contour quadrature of phi over {u = t} (t = 0: over the boundary)."""
    if t < 0 or t >= u.max():
        return 0.0
    el = _contour_elements(u, float(t), dual)
    if not len(el):
        return 0.0
    return float(np.dot(phi(el.points), el.weights))


def measure_mu_uncertainty(u: ScalarField, t: float, phi: TestFunction):
    """(value, uncertainty) with the uncertainty from the cell-corner contour."""
    a = measure_mu(u, t, phi)
    b = measure_mu(u, t, phi, dual=True)
    return a, abs(a - b)


def _subcell_offsets(ndim, sub):
    o = (np.arange(sub) + 0.5) / sub - 0.5
    mesh = np.meshgrid(*([o] * ndim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _slab_estimate(u, t, delta, phi, sub, grad, gnorm, candidates):
    grid = u.grid
    h = np.asarray(grid.spacing)
    pts = grid.points()[candidates]
    vals = u.values[candidates]
    g = grad[candidates]
    off = _subcell_offsets(grid.ndim, sub) * h
    sub_pts = pts[:, None, :] + off[None, :, :]
    lin = vals[:, None] + np.einsum("cd,sd->cs", g, off)
    inside = np.abs(lin - t) < delta
    weight = np.ones(inside.shape)
    if grid.mode == "axisymmetric":
        weight = np.abs(sub_pts[..., 0]) / pts[:, None, 0]
    phis = phi(sub_pts)
    frac = np.mean(inside * weight * phis, axis=1)
    vol = grid.cell_volumes()[candidates]
    hits = int(np.count_nonzero(inside.any(axis=1)))
    return float(np.sum(frac * vol * gnorm[candidates]) / (2 * delta)), hits


def measure_mu_coarea(u: ScalarField, t: float, delta: float | None, phi: TestFunction,
                      sub: int = 4, with_uncertainty: bool = False):
    """Slab-averaged coarea estimate of mu_t(phi).

    Each cell intersecting the slab is supersampled on ``sub``^d points using
    the linear reconstruction u_c + Du_c . (x - x_c). With
    ``with_uncertainty`` returns (value, uncertainty) where the uncertainty
    combines the slab-width bias |m(2 delta) - m(delta)| / 3 and the
    subsampling change |m_sub - m_{sub/2}|.
    """
    grid = u.grid
    gvec = np.stack(u.gradient(), axis=-1)
    gnorm = np.linalg.norm(gvec, axis=-1)
    gsup = float(gnorm[u.mask].max())
    min_delta = 2 * grid.h * gsup
    if delta is None:
        delta = min_delta
    elif delta < min_delta * (1 - 1e-12):
        raise ConfigurationError(f"slab half-width {delta:g} below 2h sup|Du| = {min_delta:g}")

    def run(dlt, s):
        reach = dlt + 0.5 * np.sum(np.abs(gvec) * np.asarray(grid.spacing), axis=-1)
        cand = np.abs(u.values - t) < reach
        return _slab_estimate(u, t, dlt, phi, s, gvec, gnorm, cand)

    value, hits = run(delta, sub)
    if hits == 0:
        raise EmptySlabError(f"no cells in the slab |u - {t:g}| < {delta:g}")
    if not with_uncertainty:
        return value
    wide, _ = run(2 * delta, sub)
    coarse, _ = run(delta, max(1, sub // 2))
    return value, abs(wide - value) / 3 + abs(coarse - value)


# ----------------------------------------------------------------------
# measure curves


@dataclass
class MeasureCurve:
    """Samples t -> mu_t(phi) with the method and an uncertainty per sample."""

    phi_id: str
    t: list = field(default_factory=list)
    mu: list = field(default_factory=list)
    method: list = field(default_factory=list)
    uncertainty: list = field(default_factory=list)

    def append(self, t, mu, method, unc):
        if self.t and t <= self.t[-1]:
            raise ValueError("measure curve times must increase strictly")
        self.t.append(float(t))
        self.mu.append(max(float(mu), 0.0))
        self.method.append(method)
        self.uncertainty.append(float(unc))

    def arrays(self):
        return np.asarray(self.t), np.asarray(self.mu)

    def write_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "mu", "method", "uncertainty"])
            for row in zip(self.t, self.mu, self.method, self.uncertainty):
                w.writerow([f"{row[0]:.17g}", f"{row[1]:.17g}", row[2], f"{row[3]:.17g}"])


def measure_curve(u: ScalarField, times, phi: TestFunction, method="contour") -> MeasureCurve:
    curve = MeasureCurve(phi.identifier)
    for t in sorted(float(x) for x in times):
        if method == "contour":
            val, unc = measure_mu_uncertainty(u, t, phi)
        elif method == "coarea":
            val, unc = measure_mu_coarea(u, t, None, phi, with_uncertainty=True)
        else:
            raise ConfigurationError(f"unknown measure method {method!r}")
        curve.append(t, val, method, unc)
    return curve


# ----------------------------------------------------------------------
# inverse-gradient measures


def region_fraction(grid, predicate, sub: int = 4) -> np.ndarray:
    """Volume fraction of each cell satisfying ``predicate(points)`` (supersampled).

    Points passed to the predicate are in grid coordinates; in axisymmetric
    mode the subsamples carry the rho weight.
    """
    pts = grid.points()
    off = _subcell_offsets(grid.ndim, sub) * np.asarray(grid.spacing)
    shape = pts.shape[:-1]
    flat = pts.reshape(-1, grid.ndim)
    acc = np.zeros(flat.shape[0])
    wsum = np.zeros(flat.shape[0])
    for o in off:
        p = flat + o
        w = np.abs(p[:, 0]) if grid.mode == "axisymmetric" else np.ones(len(p))
        acc += w * predicate(p)
        wsum += w
    return (acc / wsum).reshape(shape)


def domain_fraction(domain, sub: int = 4) -> np.ndarray:
    """Cell volume fractions of {psi < 0} from the analytic level function."""
    grid = domain.grid

    def inside(p):
        return domain.shape.level(grid.to_ambient(p)) < 0

    frac = np.where(domain.mask, 1.0, 0.0)
    near = np.abs(domain.psi) < grid.h * np.sqrt(grid.ndim)
    if near.any():
        full = region_fraction(grid, inside, sub)
        frac[near] = full[near]
    return frac


def annulus_fraction(grid, center, a, b, sub: int = 4) -> np.ndarray:
    """Fractional mask of {a <= |x - center| <= b} (grid coordinates)."""
    c = np.asarray(center, float)

    def pred(p):
        r = np.linalg.norm(p - c, axis=1)
        return (r >= a) & (r <= b)

    return region_fraction(grid, pred, sub)


def inverse_gradient_measure(f: ScalarField, eps: float, region=None, eta=None,
                             return_excluded: bool = False):
    """Integral of 1 / sqrt(eps^2 + |Df|^2) over ``region``.

    ``region`` is a boolean or fractional cell mask (default: the interior
    mask). With eps = 0, cells where |Df| < eta are left out; their volume
    is returned as a second value when ``return_excluded`` is set.
    """
    if eps < 0:
        raise ConfigurationError("eps must be nonnegative")
    weight = f.mask.astype(float) if region is None else np.asarray(region, dtype=float)
    vol = f.grid.cell_volumes() * weight
    gnorm = f.gradient_norm()
    excluded = 0.0
    if eps == 0:
        eta = default_eta(f) if eta is None else eta
        bad = gnorm < eta
        excluded = float(vol[bad].sum())
        vol = np.where(bad, 0.0, vol)
        gnorm = np.where(bad, 1.0, gnorm)
    denom = np.sqrt(eps * eps + gnorm * gnorm)
    ratio = np.divide(vol, denom, out=np.zeros_like(vol), where=vol > 0)
    value = float(np.sum(ratio))
    return (value, excluded) if return_excluded else value


def degenerate_volume(f: ScalarField, eta: float) -> float:
    """Volume of interior cells with |Df| < eta."""
    vol = f.grid.cell_volumes()
    return float(vol[(f.gradient_norm() < eta) & f.mask].sum())


@dataclass
class DefectEstimate:
    region: int
    alpha_eps: list
    alpha: float
    excluded_volume: float
    gamma: float
    gaps: list
    monotone_tail: bool

    @property
    def reliable(self) -> bool:
        return self.monotone_tail

    def to_dict(self) -> dict:
        return {"region": self.region, "alpha_eps": self.alpha_eps, "alpha": self.alpha,
                "excluded_volume": self.excluded_volume, "gamma": self.gamma,
                "gaps": self.gaps, "monotone_tail": self.monotone_tail}


def defect_measure_scan(fields, eps_values, u: ScalarField, regions, eta=None,
                        reference=None):
    """Per-region estimate of gamma = lim alpha^eps - alpha.

    ``alpha^eps_k`` uses (u^{eps_k}, eps_k); the limit is a linear fit in eps
    over the last three rungs evaluated at eps = 0. ``reference`` optionally
    replaces the numerical alpha(region) by known values (used for the gaps).
    """
    if len(fields) < 3:
        raise ConfigurationError("defect scan needs at least three rungs")
    out = []
    eps = np.asarray(eps_values, float)
    for k, region in enumerate(regions):
        a_eps = [inverse_gradient_measure(f, e, region) for f, e in zip(fields, eps)]
        alpha, excl = inverse_gradient_measure(u, 0.0, region, eta, return_excluded=True)
        coef = np.polyfit(eps[-3:], a_eps[-3:], 1)
        target = alpha if reference is None else float(reference[k])
        gaps = [abs(a - target) for a in a_eps]
        tail = gaps[-3:]
        monotone = all(b < a for a, b in zip(tail, tail[1:]))
        out.append(DefectEstimate(k, a_eps, alpha, excl, float(np.polyval(coef, 0.0)) - alpha,
                                  gaps, monotone))
    return out
