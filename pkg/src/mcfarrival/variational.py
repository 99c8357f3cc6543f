"""The functional J_u and the minimality properties of an arrival time.

For a window K inside the domain,

    J_u(v)  = int_K |Dv| - v / |Du| dx              (functions)
    J_u(F)  = |boundary of F inside K| - int_{F cap K} 1 / |Du| dx   (sets)

A weak solution minimizes J_u(v) among competitors agreeing with u
outside K, and its superlevel sets E_t = {u > t} minimize the set
functional. The probes here test those statements on computed fields
with an explicit discretization tolerance.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .contour import extract
from .errors import ConfigurationError, PerturbationError, WindowError
from .fields import ScalarField, centered_gradient
from .measures import annulus_fraction, default_eta, _subcell_offsets

# Tolerance constants. Both come from the exact disk arrival time
# (1 - r^2)/2 (see calibrate_tolerances): C1 bounds the discretization
# error of Delta J per unit h * int |Du| over the perturbed level band and
# of set perimeters per unit h * perimeter; C2 bounds the inverse-gradient
# mass of the excluded degenerate cluster per unit excluded volume / eta.
C1 = 0.20
C2 = 2.11
# sup |div(-Du/|Du|) - 1/|Du|| per unit h on the annulus 0.2 < r < 0.9 of
# the exact disk (see calibrate_field_constant)
C_FIELD = 1.5
FIELD_ANNULUS = (0.2, 0.9)


# ----------------------------------------------------------------------
# windows


def _eroded_mask(domain, cells):
    mask = domain.mask
    if cells <= 0:
        return mask
    axisym = domain.grid.mode == "axisymmetric"
    data = np.concatenate([mask[::-1], mask], axis=0) if axisym else mask
    st = ndimage.generate_binary_structure(mask.ndim, mask.ndim)
    er = ndimage.binary_erosion(data, structure=st, iterations=cells, border_value=0)
    return er[mask.shape[0]:] if axisym else er


@dataclass(frozen=True)
class Window:
    """Compact box K in grid coordinates."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if len(lo) != len(hi) or any(b <= a for a, b in zip(lo, hi)):
            raise ConfigurationError("window needs lower < upper on every axis")

    def contains(self, points) -> np.ndarray:
        p = np.asarray(points, float)
        return np.all((p >= self.lower) & (p <= self.upper), axis=-1)

    def mask(self, grid) -> np.ndarray:
        return self.contains(grid.points())

    def check(self, domain, margin=2):
        """Raise WindowError unless K lies ``margin`` cells inside the domain."""
        cells = self.mask(domain.grid)
        if not cells.any():
            raise WindowError("window contains no cells")
        if np.any(cells & ~_eroded_mask(domain, margin)):
            raise WindowError(f"window {self.describe()} reaches within {margin} cells of the boundary")
        return cells

    def fraction(self, grid) -> np.ndarray:
        return self.mask(grid).astype(float)

    def shrink(self, amount) -> "Window":
        return Window(tuple(a + amount for a in self.lower), tuple(b - amount for b in self.upper))

    def describe(self) -> str:
        return "[" + ", ".join(f"{a:.4g}:{b:.4g}" for a, b in zip(self.lower, self.upper)) + "]"

    @classmethod
    def around_level(cls, u: ScalarField, t: float, pad_cells=3) -> "Window":
        """Bounding box of {u >= t} padded by a few cells."""
        sel = (u.values >= t) & u.mask
        if not sel.any():
            raise WindowError(f"level {t:g} is empty")
        pts = u.grid.points()[sel]
        pad = pad_cells * u.grid.h
        lo, hi = pts.min(axis=0) - pad, pts.max(axis=0) + pad
        if u.grid.mode == "axisymmetric":
            lo[0] = max(lo[0], 0.0)
        return cls(tuple(lo), tuple(hi))


@dataclass(frozen=True)
class Annulus:
    """Window {inner <= |x - center| <= outer} with fractional boundary cells."""

    center: tuple
    inner: float
    outer: float

    def __post_init__(self):
        if not (0 <= self.inner < self.outer):
            raise ConfigurationError("annulus needs 0 <= inner < outer")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    def contains(self, points) -> np.ndarray:
        r = np.linalg.norm(np.asarray(points, float) - np.asarray(self.center), axis=-1)
        return (r >= self.inner) & (r <= self.outer)

    def fraction(self, grid) -> np.ndarray:
        return annulus_fraction(grid, self.center, self.inner, self.outer)

    def mask(self, grid) -> np.ndarray:
        return self.fraction(grid) > 0

    def check(self, domain, margin=2):
        cells = self.mask(domain.grid)
        if not cells.any():
            raise WindowError("annulus contains no cells")
        if np.any(cells & ~_eroded_mask(domain, margin)):
            raise WindowError(f"annulus {self.describe()} reaches within {margin} cells of the boundary")
        return cells

    def describe(self) -> str:
        return f"annulus({self.inner:.4g}:{self.outer:.4g})"


# ----------------------------------------------------------------------
# function functional


def _values(v):
    return v.values if isinstance(v, ScalarField) else np.asarray(v, float)


@dataclass(frozen=True)
class JParts:
    value: float
    total_variation: float
    inverse_term: float
    excluded_volume: float
    eta: float


def functional_J(u: ScalarField, v, K: Window, eta: float | None = None,
                 return_parts: bool = False):
    """J_u(v) over the cells of K (centered differences, eta-exclusion)."""
    cells = K.check(u.domain)
    vals = _values(v)
    inner = ndimage.binary_erosion(cells, ndimage.generate_binary_structure(cells.ndim, cells.ndim))
    if np.any(np.abs(vals - u.values)[~inner & u.mask] > 0):
        raise ConfigurationError("v differs from u outside the window interior")
    eta = default_eta(u) if eta is None else float(eta)
    grid = u.grid
    vol = grid.cell_volumes() * K.fraction(grid)
    gv = np.sqrt(sum(g * g for g in centered_gradient(vals, grid)))
    gu = u.gradient_norm()
    bad = gu < eta
    tv = float(np.sum(vol * gv))
    good = vol * ~bad
    ratio = np.divide(vals, gu, out=np.zeros_like(gu), where=good > 0)
    inv = float(np.sum(good * ratio))
    excl = float(np.sum(vol * bad))
    parts = JParts(tv - inv, tv, inv, excl, eta)
    return parts if return_parts else parts.value


# ----------------------------------------------------------------------
# perturbations

PERTURBATION_KINDS = ("bump-add", "bump-subtract", "level-dilate", "random-lipschitz")
_BUMP_SLOPE = 6 / np.sqrt(5) * (1 - 1 / 5) ** 2  # max of |d/ds (1-s^2)^3|


@dataclass(frozen=True)
class Perturbation:
    """Competitor v = u + amplitude * (profile) supported strictly inside K.

    The profile is a C^2 product bump on K shrunk by ``margin_cells``;
    ``level-dilate`` scales it by |Du| (moving level sets outward by about
    amplitude * bump), ``random-lipschitz`` multiplies it by a seeded
    smooth random field with values in [-1, 1].
    """

    kind: str
    window: Window
    amplitude: float
    lipschitz: float | None = None
    seed: int = 0
    margin_cells: int = 2

    def __post_init__(self):
        if self.kind not in PERTURBATION_KINDS:
            raise PerturbationError(f"unknown perturbation kind {self.kind!r}")
        if self.amplitude < 0:
            raise PerturbationError("amplitude must be nonnegative (the kind sets the sign)")

    @property
    def constraint(self) -> str:
        return {"bump-add": "v>=u", "bump-subtract": "v<=u", "level-dilate": "v>=u",
                "random-lipschitz": "free"}[self.kind]

    def _bump(self, grid):
        m = self.margin_cells * grid.h
        lo, hi = np.asarray(self.window.lower) + m, np.asarray(self.window.upper) - m
        if np.any(hi <= lo):
            raise PerturbationError("window too small for the support margin")
        c, r = 0.5 * (lo + hi), 0.5 * (hi - lo)
        s = (grid.points() - c) / r
        q = np.where(np.abs(s) < 1, 1 - s * s, 0.0)
        return np.prod(q ** 3, axis=-1), float(_BUMP_SLOPE * np.sqrt(grid.ndim) / r.min())

    def _random_field(self, grid):
        rng = np.random.default_rng(self.seed)
        lo, hi = np.asarray(self.window.lower), np.asarray(self.window.upper)
        pts = (grid.points() - lo) / (hi - lo)
        total = np.zeros(grid.shape)
        slope = 0.0
        modes = 4
        for _ in range(modes):
            k = rng.integers(1, 4, size=grid.ndim)
            ph = rng.uniform(0, 2 * np.pi, size=grid.ndim)
            total += np.prod(np.cos(np.pi * k * pts + ph), axis=-1) / modes
            slope += float(np.linalg.norm(np.pi * k / (hi - lo))) / modes
        return total, slope

    def apply(self, u: ScalarField) -> ScalarField:
        self.window.check(u.domain)
        bump, slope = self._bump(u.grid)
        if self.kind == "bump-add":
            delta = self.amplitude * bump
        elif self.kind == "bump-subtract":
            delta = -self.amplitude * bump
        elif self.kind == "level-dilate":
            g = u.gradient_norm()
            delta = self.amplitude * bump * g
            slope = slope * float(g[bump > 0].max(initial=0.0)) + float(
                np.abs(np.stack(centered_gradient(g, u.grid))).max())
        else:
            rnd, rslope = self._random_field(u.grid)
            delta = self.amplitude * bump * rnd
            slope = slope + rslope
        lip = self.amplitude * slope
        if self.lipschitz is not None and lip > self.lipschitz * (1 + 1e-12):
            raise PerturbationError(
                f"Lipschitz bound {self.lipschitz:g} exceeded (construction gives {lip:g})")
        support = (delta != 0) & u.mask
        if np.any(support & ~_eroded_mask(u.domain, self.margin_cells)):
            raise PerturbationError("perturbation support reaches the boundary margin")
        delta = np.where(u.mask, delta, 0.0)
        return ScalarField(u.values + delta, u.domain)

    def describe(self) -> dict:
        return {"kind": self.kind, "window": self.window.describe(),
                "amplitude": self.amplitude, "seed": self.seed}


def random_perturbations(u: ScalarField, count=50, seed=0, kinds=PERTURBATION_KINDS,
                         amplitude=(1e-3, 5e-2), size_cells=(6, 24)):
    """Seeded random competitors with windows placed inside the domain."""
    rng = np.random.default_rng(seed)
    grid = u.grid
    allowed = _eroded_mask(u.domain, 3)
    pts = grid.points()[allowed]
    out = []
    tries = 0
    while len(out) < count:
        tries += 1
        if tries > 200 * count:
            raise PerturbationError("could not place random windows inside the domain")
        c = pts[rng.integers(len(pts))]
        half = rng.uniform(*size_cells) * grid.h * 0.5
        win = Window(tuple(c - half), tuple(c + half))
        if grid.mode == "axisymmetric" and win.lower[0] < 0:
            continue
        try:
            win.check(u.domain)
        except WindowError:
            continue
        kind = kinds[len(out) % len(kinds)]
        amp = float(np.exp(rng.uniform(np.log(amplitude[0]), np.log(amplitude[1]))))
        out.append(Perturbation(kind, win, amp, seed=int(rng.integers(2 ** 31))))
    return out


# ----------------------------------------------------------------------
# tolerances


def band_gradient_mass(u: ScalarField, K: Window, change: np.ndarray) -> float:
    """int |Du| over the cells of K whose u-level lies in the range swept by v.

    By the coarea formula this is the integral over t of the perimeter of
    E_t inside K across the levels touched by the perturbation.
    """
    cells = K.mask(u.grid) & u.mask
    touched = (np.abs(change) > 0) & cells
    if not touched.any():
        return 0.0
    lo = float((u.values + np.minimum(change, 0))[touched].min())
    hi = float((u.values + np.maximum(change, 0))[touched].max())
    band = cells & (u.values >= lo) & (u.values <= hi)
    return float(np.sum(u.grid.cell_volumes()[band] * u.gradient_norm()[band]))


def probe_tolerance(u: ScalarField, v, K: Window, eta=None, c1=C1, c2=C2) -> float:
    """tol = c1 h int_{band} |Du| + c2 sup|v - u| excluded / eta."""
    eta = default_eta(u) if eta is None else eta
    change = _values(v) - u.values
    parts = functional_J(u, u, K, eta, return_parts=True)
    sup = float(np.abs(change).max())
    return (c1 * u.grid.h * band_gradient_mass(u, K, change)
            + c2 * sup * parts.excluded_volume / eta)


def set_tolerance(u: ScalarField, perimeter: float, excluded: float, eta=None,
                  c1=C1, c2=C2) -> float:
    """tol = c1 h perimeter + c2 excluded / eta."""
    eta = default_eta(u) if eta is None else eta
    return c1 * u.grid.h * perimeter + c2 * excluded / eta


@dataclass
class ProbeRow:
    probe: int
    kind: str
    window: str
    delta_j: float
    tol: float
    passed: bool

    def to_dict(self) -> dict:
        return {"probe": self.probe, "kind": self.kind, "K": self.window,
                "delta_J": self.delta_j, "tol": self.tol, "verdict": "pass" if self.passed else "fail"}


@dataclass
class ProbeTable:
    rows: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def __len__(self):
        return len(self.rows)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "count": len(self.rows),
                "failures": sum(not r.passed for r in self.rows),
                "min_margin": min((r.delta_j + r.tol for r in self.rows), default=0.0)}

    def write_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["probe", "kind", "K", "delta_J", "tol", "verdict"])
            for r in self.rows:
                w.writerow([r.probe, r.kind, r.window, f"{r.delta_j:.17g}", f"{r.tol:.17g}",
                            "pass" if r.passed else "fail"])


def minimality_probe(u: ScalarField, perturbations, tol=None, eta=None) -> ProbeTable:
    """Delta J = J_u(v) - J_u(u) >= -tol for each competitor."""
    eta = default_eta(u) if eta is None else eta
    table = ProbeTable()
    for k, p in enumerate(perturbations):
        v = p.apply(u)
        dj = functional_J(u, v, p.window, eta) - functional_J(u, u, p.window, eta)
        tk = probe_tolerance(u, v, p.window, eta) if tol is None else float(tol)
        table.rows.append(ProbeRow(k, p.kind, p.window.describe(), float(dj), float(tk),
                                   bool(dj >= -tk)))
    return table


# ----------------------------------------------------------------------
# sets


@dataclass
class CompetitorSet:
    """A set F on the grid, optionally given as {level > 0} for sub-cell accuracy."""

    indicator: np.ndarray
    window: Window
    relation: str = "free"
    level: np.ndarray | None = None

    def __post_init__(self):
        ind = np.asarray(self.indicator, float)
        if not np.all((ind == 0) | (ind == 1)):
            raise ConfigurationError("indicator must be 0/1 valued")
        self.indicator = ind
        if self.relation not in ("contains", "inside", "free"):
            raise ConfigurationError(f"unknown relation {self.relation!r}")

    @classmethod
    def from_level(cls, level, window, relation="free"):
        level = np.asarray(level, float)
        return cls((level > 0).astype(float), window, relation, level)

    def union(self, other: "CompetitorSet") -> "CompetitorSet":
        lv = None if self.level is None or other.level is None else np.maximum(self.level, other.level)
        return CompetitorSet(np.maximum(self.indicator, other.indicator), self.window, "free", lv)

    def intersection(self, other: "CompetitorSet") -> "CompetitorSet":
        lv = None if self.level is None or other.level is None else np.minimum(self.level, other.level)
        return CompetitorSet(np.minimum(self.indicator, other.indicator), self.window, "free", lv)

    def verify(self, reference: "CompetitorSet", grid):
        """Check that the symmetric difference with ``reference`` lies in K."""
        diff = self.indicator != reference.indicator
        if np.any(diff & ~self.window.mask(grid)):
            raise ConfigurationError("competitor differs from the reference outside K")


def _level_normalized(u: ScalarField, t: float) -> np.ndarray:
    g = np.maximum(u.gradient_norm(), 1e-12)
    return (u.values - t) / g


def level_set_competitor(u: ScalarField, t: float, window: Window | None = None) -> CompetitorSet:
    """E_t = {u > t} with its level function (u - t)/|Du|."""
    window = window or Window.around_level(u, t)
    return CompetitorSet.from_level(_level_normalized(u, t), window, "free")


def dilated_competitor(u: ScalarField, t: float, cells: float, window: Window | None = None):
    """E_t pushed outward by about ``cells`` grid cells."""
    window = window or Window.around_level(u, t, pad_cells=3 + int(np.ceil(cells)))
    return CompetitorSet.from_level(_level_normalized(u, t) + cells * u.grid.h, window, "contains")


def shrunk_competitor(u: ScalarField, t: float, cells: float, window: Window | None = None):
    """E_t pulled inward by about ``cells`` grid cells."""
    window = window or Window.around_level(u, t)
    return CompetitorSet.from_level(_level_normalized(u, t) - cells * u.grid.h, window, "inside")


def blister_competitor(u: ScalarField, t: float, center, radius, window: Window | None = None):
    """E_t united with a ball (an outward blister when centered near the boundary of E_t)."""
    base = level_set_competitor(u, t, window)
    c = np.asarray(center, float)
    ball = radius - np.linalg.norm(u.grid.points() - c, axis=-1)
    win = window or Window(tuple(np.minimum(base.window.lower, c - radius - 3 * u.grid.h)),
                           tuple(np.maximum(base.window.upper, c + radius + 3 * u.grid.h)))
    if u.grid.mode == "axisymmetric":
        win = Window((max(win.lower[0], 0.0),) + win.lower[1:], win.upper)
    return CompetitorSet.from_level(np.maximum(base.level, ball), win, "contains")


def set_fraction(F: CompetitorSet, grid, sub: int = 4) -> np.ndarray:
    """Cell volume fractions of F (linear reconstruction of the level function)."""
    if F.level is None:
        return F.indicator
    lv = F.level
    g = np.stack(centered_gradient(lv, grid), axis=-1)
    off = _subcell_offsets(grid.ndim, sub) * np.asarray(grid.spacing)
    reach = 0.5 * np.sum(np.abs(g) * np.asarray(grid.spacing), axis=-1)
    frac = (lv > 0).astype(float)
    # only cells whose neighborhood changes sign are cut; away from the
    # interface a steep level function would otherwise fake a crossing
    crossing = (ndimage.maximum_filter(lv, size=3, mode="nearest") > 0) & \
        (ndimage.minimum_filter(lv, size=3, mode="nearest") <= 0)
    near = (np.abs(lv) <= reach) & crossing
    if near.any():
        pts = grid.points()[near]
        lin = lv[near][:, None] + np.einsum("cd,sd->cs", g[near], off)
        if grid.mode == "axisymmetric":
            w = np.abs(pts[:, None, 0] + off[None, :, 0])
        else:
            w = np.ones(lin.shape)
        frac[near] = np.sum((lin > 0) * w, axis=1) / np.sum(w, axis=1)
    return frac


def set_perimeter(F: CompetitorSet, grid) -> float:
    """Perimeter of F inside K (contour of the level function, else of the
    one-cell mollified indicator at 1/2), weighted by the K fraction of the
    cell holding each element."""
    if F.level is not None:
        el = extract(F.level, 0.0, grid)
    else:
        smooth = ndimage.uniform_filter(F.indicator, size=3, mode="nearest")
        el = extract(smooth, 0.5, grid)
    if not len(el):
        return 0.0
    # sample each element and weight the samples by the K fraction of the
    # cell they fall in, so "inside K" means the same cells as the volume terms
    samples = _element_samples(el.vertices)
    idx = np.floor((samples - np.asarray(grid.lower)) / np.asarray(grid.spacing)).astype(int)
    idx = np.clip(idx, 0, np.asarray(grid.shape) - 1)
    frac = F.window.fraction(grid)[tuple(np.moveaxis(idx, -1, 0))]
    if grid.mode == "axisymmetric":
        rho = np.abs(samples[..., 0])
        w = np.divide(rho, rho.sum(axis=1, keepdims=True),
                      out=np.full(rho.shape, 1.0 / rho.shape[1]), where=rho.sum(axis=1, keepdims=True) > 0)
    else:
        w = np.full(frac.shape, 1.0 / frac.shape[1])
    return float(np.dot(el.weights, np.sum(w * frac, axis=1)))


def _element_samples(vertices, m=8):
    """(elements, samples, dim) quadrature points on segments or triangles."""
    if vertices.shape[1] == 2:
        s = (np.arange(m) + 0.5) / m
        return vertices[:, :1] * (1 - s)[None, :, None] + vertices[:, 1:2] * s[None, :, None]
    k = np.arange(m)
    i, j = np.meshgrid(k, k, indexing="ij")
    keep = i + j < m
    a = (i[keep] + 1 / 3) / m
    b = (j[keep] + 1 / 3) / m
    bary = np.stack([1 - a - b, a, b], axis=1)
    return np.einsum("sk,ekd->esd", bary, vertices)


def functional_J_set(u: ScalarField, F: CompetitorSet, eta: float | None = None,
                     return_parts: bool = False):
    """|boundary of F in K| - int_{F cap K} 1/|Du| (eta-excluded)."""
    eta = default_eta(u) if eta is None else float(eta)
    grid = u.grid
    cells = F.window.mask(grid)
    frac = set_fraction(F, grid) * cells
    vol = grid.cell_volumes() * frac
    gu = u.gradient_norm()
    bad = gu < eta
    inv = float(np.sum(np.divide(vol, gu, out=np.zeros_like(vol), where=~bad & (vol > 0))))
    excl = float(np.sum(vol[bad]))
    per = set_perimeter(F, grid)
    parts = JParts(per - inv, per, inv, excl, eta)
    return parts if return_parts else parts.value


@dataclass
class AreaRow:
    competitor: str
    perimeter_e: float
    perimeter_f: float
    tol: float
    passed: bool

    def to_dict(self) -> dict:
        return {"competitor": self.competitor, "perimeter_E": self.perimeter_e,
                "perimeter_F": self.perimeter_f, "tol": self.tol, "passed": self.passed}


def outward_area_minimality(u: ScalarField, t: float, competitors=None, seed=0,
                            blisters=5, max_cells=5):
    """perimeter(E_t; K) <= perimeter(F; K) + tol for outward competitors F.

    Default competitors: dilations by k = 1..max_cells cells and
    ``blisters`` seeded outward blisters centered on the contour of E_t.
    """
    rows = []
    el = extract(u.values, t, u.grid)
    if competitors is None:
        competitors = [(f"dilate-{k}", dilated_competitor(u, t, k)) for k in range(1, max_cells + 1)]
        rng = np.random.default_rng(seed)
        for b in range(blisters):
            if not len(el):
                break
            c = el.points[rng.integers(len(el))]
            r = rng.uniform(2, 6) * u.grid.h
            competitors.append((f"blister-{b}", blister_competitor(u, t, c, r)))
    for name, F in competitors:
        E = level_set_competitor(u, t, F.window)
        pe = set_perimeter(E, u.grid)
        pf = set_perimeter(F, u.grid)
        tol = C1 * u.grid.h * pe
        rows.append(AreaRow(name, pe, pf, tol, bool(pe <= pf + tol)))
    return rows


@dataclass
class CalibrationResult:
    field_residual: float
    inequality_residual: float
    tol: float
    degenerate_fraction: float
    unreliable: bool

    @property
    def passed(self) -> bool:
        return self.inequality_residual <= self.tol

    def to_dict(self) -> dict:
        return {"field_residual": self.field_residual,
                "inequality_residual": self.inequality_residual, "tol": self.tol,
                "degenerate_fraction": self.degenerate_fraction, "unreliable": self.unreliable}


def calibration_field_residual(u: ScalarField, cells: np.ndarray, eta=None) -> np.ndarray:
    """div(-Du/|Du|) - 1/|Du| on the given cells (NaN at degenerate cells)."""
    eta = default_eta(u) if eta is None else eta
    grid = u.grid
    g = u.gradient()
    norm = np.sqrt(sum(c * c for c in g))
    safe = np.maximum(norm, eta)
    nu = [-c / safe for c in g]
    div = np.zeros(grid.shape)
    for ax, comp in enumerate(nu):
        if grid.mode == "axisymmetric" and ax == 0:
            rho = grid.mesh()[0]
            div += centered_gradient(rho * comp, grid)[0] / rho
        else:
            div += centered_gradient(comp, grid)[ax]
    res = div - 1.0 / safe
    return np.where(cells & (norm >= eta), res, np.nan)


def calibration_check(u: ScalarField, t: float, F: CompetitorSet, eta=None) -> CalibrationResult:
    """(field residual on K, J(E_t) - J(F)) with the set tolerance."""
    eta = default_eta(u) if eta is None else eta
    grid = u.grid
    cells = F.window.mask(grid) & u.mask
    res = calibration_field_residual(u, cells, eta)
    deg = cells & (u.gradient_norm() < eta)
    vol = grid.cell_volumes()
    frac = float(vol[deg].sum() / max(vol[cells].sum(), 1e-300))
    E = level_set_competitor(u, t, F.window)
    je = functional_J_set(u, E, eta, return_parts=True)
    jf = functional_J_set(u, F, eta, return_parts=True)
    tol = set_tolerance(u, je.total_variation + jf.total_variation,
                        je.excluded_volume + jf.excluded_volume, eta)
    field_sup = float(np.nanmax(np.abs(res))) if np.any(np.isfinite(res)) else 0.0
    return CalibrationResult(field_sup, je.value - jf.value, tol, frac, frac > 0.01)


# ----------------------------------------------------------------------
# calibration of the tolerance constants


def calibrate_tolerances(cells=(65, 129), probes=24, seed=7):
    """Measure C1 and C2 on the exact disk arrival time.

    C1: max over seeded bump probes of the odd part
    |Delta J_h(+a) - Delta J_h(-a)| / 2 per unit h int|Du|. The first
    variation vanishes for the exact minimizer, so the odd part is pure
    discretization error; the even part is second order and nonnegative.
    The perimeter error of E_t per unit h * perimeter is included too.
    C2: max over grids of the true inverse-gradient mass of the excluded
    cluster, int 1/r over {r < r_eta}, per unit excluded volume / eta.
    """
    from .domain import GridSpec, ShapeSpec, build_domain

    shape = ShapeSpec.ball(1.0, 2)
    flip = {"bump-add": "bump-subtract", "bump-subtract": "bump-add"}

    def exact(d):
        return ScalarField.from_function(d, lambda p: (1 - np.sum(p * p, -1)) / 2)

    c1, c2 = 0.0, 0.0
    for n in cells:
        d = build_domain(shape, GridSpec.around(shape, n))
        u = exact(d)
        eta = default_eta(u)
        for p in random_perturbations(u, probes, seed, kinds=tuple(flip)):
            base = functional_J(u, u, p.window, eta, return_parts=True)
            if base.excluded_volume > 0:
                continue  # the degenerate cluster is C2's business
            v = p.apply(u)
            w = replace(p, kind=flip[p.kind]).apply(u)
            odd = 0.5 * abs(functional_J(u, v, p.window, eta) - functional_J(u, w, p.window, eta))
            mass = band_gradient_mass(u, p.window, v.values - u.values)
            if mass > 0:
                c1 = max(c1, odd / (d.h * mass))
        for t in np.linspace(0.05, 0.45, 9):
            r = np.sqrt(1 - 2 * t)
            per = set_perimeter(level_set_competitor(u, t), d.grid)
            c1 = max(c1, abs(per - 2 * np.pi * r) / (d.h * 2 * np.pi * r))
        gu = u.gradient_norm()
        bad = (gu < eta) & d.mask
        excl = float(d.grid.cell_volumes()[bad].sum())
        r_eta = float(np.sqrt(np.sum(d.grid.points() ** 2, -1))[bad].max()) + d.h / np.sqrt(2)
        c2 = max(c2, float(2 * np.pi * r_eta / (excl / eta)))
    return c1, c2


def calibrate_field_constant(cells=(129, 257), annulus=FIELD_ANNULUS):
    """max over grids of sup |calibration residual| / h for the exact disk."""
    from .domain import GridSpec, ShapeSpec, build_domain

    shape = ShapeSpec.ball(1.0, 2)
    c = 0.0
    for n in cells:
        d = build_domain(shape, GridSpec.around(shape, n))
        u = ScalarField.from_function(d, lambda p: (1 - np.sum(p * p, -1)) / 2)
        r = np.linalg.norm(d.grid.points(), axis=-1)
        sel = (r > annulus[0]) & (r < annulus[1]) & d.mask
        c = max(c, float(np.nanmax(np.abs(calibration_field_residual(u, sel)))) / d.h)
    return c


def annulus_field_residual(u: ScalarField, annulus=FIELD_ANNULUS) -> float:
    """sup of the calibration residual over an annulus about the domain center."""
    r = np.linalg.norm(u.grid.points() - u.domain.center, axis=-1)
    sel = (r > annulus[0]) & (r < annulus[1]) & u.mask
    return float(np.nanmax(np.abs(calibration_field_residual(u, sel))))


# ----------------------------------------------------------------------
# submodularity


def submodularity_gap(u: ScalarField, v, w, K: Window, eta=None) -> float:
    """J(min) + J(max) - J(v) - J(w) (zero in the continuum)."""
    a, b = _values(v), _values(w)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    return (functional_J(u, lo, K, eta) + functional_J(u, hi, K, eta)
            - functional_J(u, a, K, eta) - functional_J(u, b, K, eta))


def set_submodularity_gap(u: ScalarField, E: CompetitorSet, F: CompetitorSet, eta=None) -> float:
    """J(E cup F) + J(E cap F) - J(E) - J(F) (nonpositive in the continuum)."""
    return (functional_J_set(u, E.union(F), eta) + functional_J_set(u, E.intersection(F), eta)
            - functional_J_set(u, E, eta) - functional_J_set(u, F, eta))


def coarea_J(u: ScalarField, v, K: Window, levels=200, eta=None) -> float:
    """int_a^b J_u(F_s) ds - a int_K 1/|Du| with F_s = {v > s} given by the
    level function v - s (no normalization, which misbehaves at critical
    points of v)."""
    vals = _values(v)
    cells = K.mask(u.grid) & u.mask
    grads = centered_gradient(vals, u.grid)
    # levels crossing the outer halves of the extreme cells count too
    spread = 0.5 * sum(np.abs(g) * dx for g, dx in zip(grads, u.grid.spacing))
    a = float((vals - spread)[cells].min()) - 1e-9
    b = float((vals + spread)[cells].max()) + 1e-9
    eta = default_eta(u) if eta is None else eta
    ds = (b - a) / levels
    total = 0.0
    for k in range(levels):
        s = a + (k + 0.5) * ds
        F = CompetitorSet.from_level(vals - s, K)
        total += functional_J_set(u, F, eta) * ds
    gu = u.gradient_norm()
    vol = u.grid.cell_volumes() * cells
    bad = gu < eta
    base = float(np.sum(np.where(bad, 0.0, vol / np.where(bad, 1.0, gu))))
    return total - a * base


# ----------------------------------------------------------------------
# uniqueness


@dataclass
class UniquenessReport:
    route_a: str
    route_b: str
    gap: float
    eps_last: float
    h: float

    def to_dict(self) -> dict:
        return {"route_a": self.route_a, "route_b": self.route_b, "gap": self.gap,
                "eps_last": self.eps_last, "h": self.h}


def uniqueness_two_route(domain, ladder=None, params=None, route="auto"):
    """sup |u_1 - u_2| between two independent computations of the arrival time.

    Route A is the Newton ladder on the face stencil. Route B is the radial
    shooting oracle at the last epsilon (``route="oracle"``, balls only) or
    a lagged-coefficient ladder on the cell-averaged stencil polished by
    Newton (``route="stencil"``). ``auto`` picks the oracle for disks and
    the second stencil otherwise.
    """
    from .radial import oracle_field, solve_radial
    from .solver import EpsilonLadder, SolverParams, epsilon_continuation

    ladder = ladder or EpsilonLadder.default_for(domain.grid)
    params = params or SolverParams()
    if route == "auto":
        route = "oracle" if domain.shape.kind == "ball" and domain.grid.ndim == 2 \
            and domain.grid.mode == "cartesian" else "stencil"
    if route not in ("oracle", "stencil"):
        raise ConfigurationError(f"unknown route {route!r}")
    if route == "oracle" and domain.shape.kind != "ball":
        raise ConfigurationError("oracle route needs a ball")
    a = epsilon_continuation(domain, ladder, params).u
    eps = ladder[-1]
    if route == "oracle":
        prof = solve_radial(domain.shape.radii[0], domain.n, eps)
        b = oracle_field(prof, domain)
        name = "radial-oracle"
    elif route == "stencil":
        p2 = SolverParams(**{**params.__dict__, "variant": "cell", "method": "picard"})
        b = epsilon_continuation(domain, ladder, p2).u
        name = "picard-cell-stencil"
    gap = float(np.abs(a.values - b.values)[domain.mask].max())
    return UniquenessReport("newton-face-stencil", name, gap, float(eps), domain.h)
