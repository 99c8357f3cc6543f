"""Implicit domains on structured grids.

A domain is ``{psi < 0}`` for a level function ``psi`` sampled at cell
centers. Balls and the axisymmetric torus use exact signed distances;
the other shapes use smooth defining functions scaled to be distance-like
near the boundary.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from . import contour
from .errors import ConfigurationError, MeanConvexityError

SHAPE_KINDS = ("ball", "ellipsoid", "rounded-box", "torus-axisym", "custom")
MIN_RESOLUTION = 16
MIN_MARGIN_CELLS = 3

_SAFE_NAMES = {
    name: getattr(np, name)
    for name in ("sqrt", "exp", "log", "sin", "cos", "tan", "arctan2", "abs",
                 "maximum", "minimum", "hypot", "pi")
}


def _as_tuple(values, dim=None):
    if values is None:
        return ()
    if np.isscalar(values):
        return (float(values),) * (dim or 1)
    return tuple(float(v) for v in values)


@dataclass(frozen=True)
class ShapeSpec:
    """Geometric description of a bounded domain in R^2 or R^3.

    ``radii`` holds the radius (ball), semi-axes (ellipsoid) or half-widths
    (rounded box). ``expression`` is a numpy expression in ``x, y, z`` that is
    negative inside (custom shapes only); ``half_extent`` bounds a custom shape.
    """

    kind: str
    dim: int = 2
    center: tuple = ()
    radii: tuple = ()
    ring_radius: float = 0.0
    tube_radius: float = 0.0
    exponent: float = 4.0
    blend: float = 0.3
    expression: str | None = None
    half_extent: tuple = ()

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise ConfigurationError(f"unknown shape kind {self.kind!r}")
        if self.dim not in (2, 3):
            raise ConfigurationError(f"ambient dimension must be 2 or 3, got {self.dim}")
        center = _as_tuple(self.center) or (0.0,) * self.dim
        if len(center) != self.dim:
            raise ConfigurationError("center has the wrong dimension")
        object.__setattr__(self, "center", center)
        radii = _as_tuple(self.radii, self.dim if self.kind != "ball" else 1)
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "half_extent", _as_tuple(self.half_extent, self.dim))
        if self.kind == "ball" and len(radii) != 1:
            raise ConfigurationError("a ball takes a single radius")
        if self.kind in ("ellipsoid", "rounded-box") and len(radii) != self.dim:
            raise ConfigurationError(f"{self.kind} needs one radius per axis")
        if any(r <= 0 for r in radii):
            raise ConfigurationError("radii must be strictly positive")
        if self.kind == "torus-axisym":
            if self.dim != 3:
                raise ConfigurationError("the torus lives in R^3")
            if not (0 < self.tube_radius < self.ring_radius):
                raise ConfigurationError("torus needs 0 < tube radius < ring radius")
        if self.kind == "rounded-box" and not (self.exponent >= 2 and 0 < self.blend <= 1):
            raise ConfigurationError("rounded box needs exponent >= 2 and 0 < blend <= 1")
        if self.kind == "custom":
            if not self.expression:
                raise ConfigurationError("custom shape needs an expression")
            if len(self.half_extent) != self.dim or any(e <= 0 for e in self.half_extent):
                raise ConfigurationError("custom shape needs a positive half_extent per axis")

    # constructors -------------------------------------------------------
    @classmethod
    def ball(cls, radius=1.0, dim=2, center=None):
        return cls("ball", dim=dim, center=center or (), radii=(radius,))

    @classmethod
    def ellipsoid(cls, radii, center=None):
        return cls("ellipsoid", dim=len(radii), center=center or (), radii=tuple(radii))

    @classmethod
    def rounded_box(cls, half_widths, exponent=4.0, blend=0.3, center=None):
        return cls("rounded-box", dim=len(half_widths), center=center or (),
                   radii=tuple(half_widths), exponent=exponent, blend=blend)

    @classmethod
    def torus(cls, ring_radius=1.0, tube_radius=0.3):
        return cls("torus-axisym", dim=3, ring_radius=ring_radius, tube_radius=tube_radius)

    @classmethod
    def custom(cls, expression, half_extent, dim=2, center=None):
        return cls("custom", dim=dim, center=center or (), expression=expression,
                   half_extent=tuple(half_extent))

    # geometry -------------------------------------------------------------
    @property
    def n(self) -> int:
        """Dimension of the boundary hypersurface."""
        return self.dim - 1

    @property
    def is_signed_distance(self) -> bool:
        return self.kind in ("ball", "torus-axisym")

    @property
    def axisymmetric(self) -> bool:
        """True if the shape is invariant under rotation about the z axis."""
        if self.dim != 3:
            return False
        if self.kind == "torus-axisym":
            return True
        on_axis = self.center[0] == 0.0 and self.center[1] == 0.0
        if self.kind == "ball":
            return on_axis
        if self.kind == "ellipsoid":
            return on_axis and self.radii[0] == self.radii[1]
        return self.kind == "custom" and on_axis

    def level(self, points) -> np.ndarray:
        """Level function at points of shape (..., dim); negative inside."""
        p = np.asarray(points, dtype=float) - np.asarray(self.center)
        if self.kind == "ball":
            return np.sqrt(np.sum(p * p, axis=-1)) - self.radii[0]
        if self.kind == "ellipsoid":
            a = np.asarray(self.radii)
            return min(self.radii) * (np.sqrt(np.sum((p / a) ** 2, axis=-1)) - 1.0)
        if self.kind == "rounded-box":
            a = np.asarray(self.radii)
            q = np.abs(p / a)
            pnorm = np.sum(q ** self.exponent, axis=-1) ** (1.0 / self.exponent)
            enorm = np.sqrt(np.sum(q * q, axis=-1))
            mixed = (1.0 - self.blend) * pnorm + self.blend * enorm
            return min(self.radii) * (mixed - 1.0)
        if self.kind == "torus-axisym":
            rho = np.sqrt(p[..., 0] ** 2 + p[..., 1] ** 2)
            return np.sqrt((rho - self.ring_radius) ** 2 + p[..., 2] ** 2) - self.tube_radius
        names = dict(_SAFE_NAMES, x=p[..., 0], y=p[..., 1])
        if self.dim == 3:
            names["z"] = p[..., 2]
        value = eval(self.expression, {"__builtins__": {}}, names)  # trusted config input
        return np.broadcast_to(np.asarray(value, dtype=float), p.shape[:-1]).copy()

    def bounds(self):
        """Axis-aligned bounding box (lower, upper) of the shape."""
        c = np.asarray(self.center)
        if self.kind == "ball":
            half = np.full(self.dim, self.radii[0])
        elif self.kind in ("ellipsoid", "rounded-box"):
            half = np.asarray(self.radii)
        elif self.kind == "torus-axisym":
            outer = self.ring_radius + self.tube_radius
            half = np.array([outer, outer, self.tube_radius])
        else:
            half = np.asarray(self.half_extent)
        return tuple(c - half), tuple(c + half)

    def exact_boundary_area(self):
        """Closed-form |boundary| where one exists, else None."""
        if self.kind == "ball":
            r = self.radii[0]
            return 2 * math.pi * r if self.dim == 2 else 4 * math.pi * r * r
        if self.kind == "torus-axisym":
            return 4 * math.pi ** 2 * self.ring_radius * self.tube_radius
        return None

    def _directions(self, count):
        if self.dim == 2:
            ang = 2 * np.pi * (np.arange(count) + 0.5) / count
            return np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        k = np.arange(count) + 0.5
        zc = 1 - 2 * k / count
        ang = np.pi * (1 + 5 ** 0.5) * k
        s = np.sqrt(1 - zc * zc)
        return np.stack([s * np.cos(ang), s * np.sin(ang), zc], axis=-1)

    def boundary_points(self, count=256) -> np.ndarray:
        """Quasi-uniform points on the boundary.

        Torus points come from a (theta, phi) lattice; every other shape is
        assumed star-shaped about its center and is ray-cast by bisection.
        """
        if self.kind == "torus-axisym":
            m = max(4, int(math.ceil(math.sqrt(count))))
            th = 2 * np.pi * (np.arange(m) + 0.5) / m
            ph = 2 * np.pi * np.arange(m) / m
            T, P = np.meshgrid(th, ph, indexing="ij")
            rho = self.ring_radius + self.tube_radius * np.cos(T)
            pts = np.stack([rho * np.cos(P), rho * np.sin(P), self.tube_radius * np.sin(T)], -1)
            return pts.reshape(-1, 3)
        dirs = self._directions(count)
        lo, hi = self.bounds()
        smax = 2.0 * float(np.linalg.norm(np.subtract(hi, lo)))
        c = np.asarray(self.center)
        a = np.zeros(count)
        b = np.full(count, smax)
        if np.any(self.level(c[None, :]) >= 0):
            raise ConfigurationError("shape center is not inside the shape")
        for _ in range(80):
            mid = 0.5 * (a + b)
            inside = self.level(c + mid[:, None] * dirs) < 0
            a = np.where(inside, mid, a)
            b = np.where(inside, b, mid)
        return c + (0.5 * (a + b))[:, None] * dirs

    def mean_curvature(self, points, step=None) -> np.ndarray:
        """Mean curvature div(grad psi / |grad psi|) by central differences.

        The sign convention gives a sphere of radius R the value n / R.
        """
        pts = np.asarray(points, dtype=float)
        lo, hi = self.bounds()
        if step is None:
            step = 1e-4 * float(np.max(np.subtract(hi, lo)))
        d = self.dim
        eye = np.eye(d) * step
        f0 = self.level(pts)
        grad = np.empty(pts.shape)
        hess = np.empty(pts.shape + (d,))
        for i in range(d):
            fp = self.level(pts + eye[i])
            fm = self.level(pts - eye[i])
            grad[..., i] = (fp - fm) / (2 * step)
            hess[..., i, i] = (fp - 2 * f0 + fm) / step ** 2
            for j in range(i + 1, d):
                fpp = self.level(pts + eye[i] + eye[j])
                fpm = self.level(pts + eye[i] - eye[j])
                fmp = self.level(pts - eye[i] + eye[j])
                fmm = self.level(pts - eye[i] - eye[j])
                hess[..., i, j] = hess[..., j, i] = (fpp - fpm - fmp + fmm) / (4 * step ** 2)
        g2 = np.sum(grad * grad, axis=-1)
        trace = np.trace(hess, axis1=-2, axis2=-1)
        ghg = np.einsum("...i,...ij,...j->...", grad, hess, grad)
        return (g2 * trace - ghg) / g2 ** 1.5

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "dim": self.dim, "center": list(self.center)}
        if self.kind == "torus-axisym":
            out.update(ring_radius=self.ring_radius, tube_radius=self.tube_radius)
        else:
            out["radii"] = list(self.radii)
        if self.kind == "rounded-box":
            out.update(exponent=self.exponent, blend=self.blend)
        if self.kind == "custom":
            out.update(expression=self.expression, half_extent=list(self.half_extent))
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ShapeSpec":
        data = dict(data)
        for key in ("center", "radii", "half_extent"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


def torus_mean_curvature_scan(ring_radius, tube_radius, count=4096):
    """Brute-force scan of 1/rho0 + cos(th)/(R0 + rho0 cos(th)) over the tube angle.

    Returns (minimum, angle of the minimum).
    """
    th = 2 * np.pi * np.arange(count) / count
    h = 1.0 / tube_radius + np.cos(th) / (ring_radius + tube_radius * np.cos(th))
    k = int(np.argmin(h))
    return float(h[k]), float(th[k])


def _pad(margin, length, cells, sides):
    # at least MIN_MARGIN_CELLS + 1 cells of clearance
    need = MIN_MARGIN_CELLS + 1
    pad = margin * length
    if pad * cells < need * (length + sides * pad):
        pad = need * length / (cells - sides * need)
    return pad


@dataclass(frozen=True)
class GridSpec:
    """Cell-centered structured grid.

    In axisymmetric mode the two axes are (rho, z) and ``lower[0]`` is 0.
    """

    lower: tuple
    upper: tuple
    shape: tuple
    mode: str = "cartesian"

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        shape = tuple(int(v) for v in self.shape)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "shape", shape)
        if not (len(lower) == len(upper) == len(shape)) or len(shape) not in (2, 3):
            raise ConfigurationError("grid needs 2 or 3 axes with matching bounds")
        if any(u <= l for l, u in zip(lower, upper)):
            raise ConfigurationError("grid upper bounds must exceed lower bounds")
        if any(n < MIN_RESOLUTION for n in shape):
            raise ConfigurationError(f"grid resolution must be at least {MIN_RESOLUTION} per axis")
        if self.mode not in ("cartesian", "axisymmetric"):
            raise ConfigurationError(f"unknown coordinate mode {self.mode!r}")
        if self.mode == "axisymmetric" and (len(shape) != 2 or lower[0] != 0.0):
            raise ConfigurationError("axisymmetric grids are (rho, z) with rho starting at 0")

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def ambient_dim(self) -> int:
        return 3 if self.mode == "axisymmetric" else self.ndim

    @property
    def spacing(self) -> tuple:
        return tuple((u - l) / n for l, u, n in zip(self.lower, self.upper, self.shape))

    @property
    def h(self) -> float:
        return max(self.spacing)

    def axes(self):
        return [l + (np.arange(n) + 0.5) * s
                for l, n, s in zip(self.lower, self.shape, self.spacing)]

    def mesh(self):
        return np.meshgrid(*self.axes(), indexing="ij")

    def points(self) -> np.ndarray:
        """Cell centers in grid coordinates, shape ``self.shape + (ndim,)``."""
        return np.stack(self.mesh(), axis=-1)

    def ambient_points(self) -> np.ndarray:
        """Cell centers in R^d; (rho, z) maps to (rho, 0, z)."""
        pts = self.points()
        if self.mode == "axisymmetric":
            return np.stack([pts[..., 0], np.zeros(self.shape), pts[..., 1]], axis=-1)
        return pts

    def to_ambient(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        if self.mode == "axisymmetric":
            return np.stack([pts[..., 0], np.zeros(pts.shape[:-1]), pts[..., 1]], axis=-1)
        return pts

    def cell_volumes(self) -> np.ndarray:
        vol = float(np.prod(self.spacing))
        if self.mode == "axisymmetric":
            return 2 * np.pi * self.mesh()[0] * vol
        return np.full(self.shape, vol)

    def refined(self, factor=2) -> "GridSpec":
        return replace(self, shape=tuple(factor * n for n in self.shape))

    @classmethod
    def around(cls, shape: ShapeSpec, cells=128, margin=0.1, mode=None) -> "GridSpec":
        """Grid with equal spacing that contains ``shape`` plus a relative margin.

        ``cells`` is the count along the longest axis.
        """
        if mode is None:
            mode = "axisymmetric" if shape.kind == "torus-axisym" else "cartesian"
        lo, hi = np.asarray(shape.bounds()[0]), np.asarray(shape.bounds()[1])
        if mode == "axisymmetric":
            if not shape.axisymmetric:
                raise ConfigurationError(f"{shape.kind} is not axisymmetric about the z axis")
            lo = np.array([0.0, lo[2]])
            hi = np.array([hi[0], hi[2]])
            pad = _pad(margin, float(np.max(hi - lo)), cells, 1)
            hi = hi + pad
            lo = np.array([0.0, lo[1] - pad])
        else:
            pad = _pad(margin, float(np.max(hi - lo)), cells, 2)
            lo, hi = lo - pad, hi + pad
        length = hi - lo
        h = float(np.max(length)) / cells
        counts = np.maximum(MIN_RESOLUTION, np.ceil(length / h - 1e-9).astype(int))
        if mode == "axisymmetric":
            hi = lo + counts * h
        else:
            mid = 0.5 * (lo + hi)
            lo, hi = mid - 0.5 * counts * h, mid + 0.5 * counts * h
        return cls(tuple(lo), tuple(hi), tuple(int(c) for c in counts), mode)

    @classmethod
    def with_spacing(cls, shape: ShapeSpec, h: float, margin=0.1, mode=None) -> "GridSpec":
        """Grid of spacing exactly ``h`` around ``shape``."""
        if mode is None:
            mode = "axisymmetric" if shape.kind == "torus-axisym" else "cartesian"
        lo, hi = np.asarray(shape.bounds()[0]), np.asarray(shape.bounds()[1])
        if mode == "axisymmetric":
            if not shape.axisymmetric:
                raise ConfigurationError(f"{shape.kind} is not axisymmetric about the z axis")
            lo = np.array([0.0, lo[2]])
            hi = np.array([hi[0], hi[2]])
        pad = max(margin * float(np.max(hi - lo)), (MIN_MARGIN_CELLS + 1) * h)
        counts = np.maximum(MIN_RESOLUTION,
                            np.ceil((hi - lo + (1 if mode == "axisymmetric" else 2) * pad) / h
                                    - 1e-9).astype(int))
        if mode == "axisymmetric":
            lo = np.array([0.0, 0.5 * (lo[1] + hi[1]) - 0.5 * counts[1] * h])
        else:
            lo = 0.5 * (lo + hi) - 0.5 * counts * h
        return cls(tuple(lo), tuple(lo + counts * h), tuple(int(c) for c in counts), mode)

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper),
                "shape": list(self.shape), "mode": self.mode}

    @classmethod
    def from_dict(cls, data: dict) -> "GridSpec":
        return cls(tuple(data["lower"]), tuple(data["upper"]), tuple(data["shape"]),
                   data.get("mode", "cartesian"))


@dataclass
class ImplicitDomain:
    """A shape sampled on a grid: level function, interior mask, boundary data."""

    shape: ShapeSpec
    grid: GridSpec
    psi: np.ndarray
    mask: np.ndarray
    boundary_area: float
    boundary_points: np.ndarray
    boundary_h: np.ndarray
    _distance: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.shape.n

    @property
    def h(self) -> float:
        return self.grid.h

    @property
    def volume(self) -> float:
        return float(self.grid.cell_volumes()[self.mask].sum())

    @property
    def center(self) -> np.ndarray:
        c = np.asarray(self.shape.center)
        if self.grid.mode == "axisymmetric":
            return np.array([0.0, c[2]])
        return c

    def distance(self) -> np.ndarray:
        """Distance to the boundary (exact for signed-distance shapes)."""
        if self._distance is None:
            if self.shape.is_signed_distance:
                d = -self.psi
            else:
                grads = np.gradient(self.psi, *self.grid.spacing)
                norm = np.sqrt(sum(g * g for g in grads))
                d = -self.psi / np.maximum(norm, 1e-12)
                # -psi/|D psi| blows up at critical points of psi; the
                # distance to the nearest exterior cell bounds it there
                inside = self.psi < 0
                if self.grid.mode == "axisymmetric":
                    both = np.concatenate([inside[::-1], inside], axis=0)
                    edt = ndimage.distance_transform_edt(both, sampling=self.grid.spacing)
                    edt = edt[inside.shape[0]:]
                else:
                    edt = ndimage.distance_transform_edt(inside, sampling=self.grid.spacing)
                d = np.where(inside, np.minimum(d, edt), d)
            self._distance = d
        return self._distance

    def to_json(self) -> str:
        return json.dumps({"shape": self.shape.to_dict(), "grid": self.grid.to_dict()},
                          sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ImplicitDomain":
        data = json.loads(text)
        return build_domain(ShapeSpec.from_dict(data["shape"]), GridSpec.from_dict(data["grid"]))


def _check_containment(shape: ShapeSpec, grid: GridSpec):
    lo, hi = shape.bounds()
    lo, hi = np.asarray(lo), np.asarray(hi)
    sp = np.asarray(grid.spacing)
    if grid.mode == "axisymmetric":
        lo = np.array([0.0, lo[2]])
        hi = np.array([hi[0], hi[2]])
        need_lo = np.array([0.0, grid.lower[1] + MIN_MARGIN_CELLS * sp[1]])
        ok_lo = lo[1] >= need_lo[1]
    else:
        ok_lo = np.all(lo >= np.asarray(grid.lower) + MIN_MARGIN_CELLS * sp)
    ok_hi = np.all(hi <= np.asarray(grid.upper) - MIN_MARGIN_CELLS * sp)
    if not (ok_lo and ok_hi):
        raise ConfigurationError(
            f"shape {shape.kind} does not fit inside the grid box with a "
            f"{MIN_MARGIN_CELLS}-cell margin"
        )


def build_domain(shape: ShapeSpec, grid: GridSpec, samples=256,
                 require_mean_convex=True) -> ImplicitDomain:
    """Sample ``shape`` on ``grid`` and validate the boundary hypotheses.

    Raises ConfigurationError when the shape does not fit in the box and
    MeanConvexityError when some boundary sample has H <= 0.
    """
    if grid.mode == "axisymmetric":
        if not shape.axisymmetric:
            raise ConfigurationError(f"{shape.kind} is not axisymmetric about the z axis")
    elif grid.ndim != shape.dim:
        raise ConfigurationError("grid dimension does not match the shape dimension")
    _check_containment(shape, grid)
    psi = shape.level(grid.ambient_points())
    mask = psi < 0
    if not mask.any():
        raise ConfigurationError("no grid cell lies inside the shape")
    edge = np.zeros(grid.shape, dtype=bool)
    for ax in range(grid.ndim):
        sl = [slice(None)] * grid.ndim
        for idx in (slice(0, MIN_MARGIN_CELLS), slice(-MIN_MARGIN_CELLS, None)):
            if grid.mode == "axisymmetric" and ax == 0 and idx.start == 0:
                continue
            sl[ax] = idx
            edge[tuple(sl)] = True
    if np.any(mask & edge):
        raise ConfigurationError("shape reaches the grid margin")
    area = contour.extract(psi, 0.0, grid).total
    pts = shape.boundary_points(samples)
    hval = shape.mean_curvature(pts)
    if require_mean_convex and not np.all(hval > 0):
        hmin = float(np.min(hval))
        raise MeanConvexityError(
            f"boundary mean curvature is not strictly positive (min H = {hmin:.6g})", hmin
        )
    return ImplicitDomain(shape, grid, psi, mask, float(area), pts, hval)


def boundary_mean_curvature_min(domain: ImplicitDomain) -> float:
    """Minimum sampled boundary mean curvature (sphere of radius R gives n/R)."""
    return float(np.min(domain.boundary_h))


CATALOG = {
    "ball": lambda p: ShapeSpec.ball(p.get("R", 1.0), int(p.get("dim", 2))),
    "ellipsoid": lambda p: ShapeSpec.ellipsoid(
        p.get("radii", (1.0, 0.6) if int(p.get("dim", 2)) == 2 else (1.0, 0.8, 0.6))),
    "rounded-box": lambda p: ShapeSpec.rounded_box(
        p.get("half_widths", (1.0, 0.7) if int(p.get("dim", 2)) == 2 else (1.0, 0.8, 0.7)),
        exponent=p.get("exponent", 4.0), blend=p.get("blend", 0.3)),
    "torus": lambda p: ShapeSpec.torus(p.get("R0", 1.0), p.get("rho0", 0.3)),
}


def shape_from_catalog(name: str, params: dict | None = None) -> ShapeSpec:
    """Look up a shape by its catalog name ('ball', 'ellipsoid', 'rounded-box', 'torus')."""
    try:
        factory = CATALOG[name]
    except KeyError:
        raise ConfigurationError(f"unknown shape {name!r}; known: {sorted(CATALOG)}") from None
    return factory(params or {})
