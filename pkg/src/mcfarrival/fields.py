"""Grid-sampled scalar fields and their diagnostic derivatives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import ImplicitDomain

THETA_MIN = 1e-3


@dataclass
class ScalarField:
    """Values at every cell of ``domain.grid``.

    Interior cells (``domain.mask``) carry the field. Exterior cells hold an
    extension across the Dirichlet boundary: the analytic continuation for
    sampled functions, a linear extrapolation for solver output. Contouring
    and centered differences near the boundary read the extension.
    """

    values: np.ndarray
    domain: ImplicitDomain
    dirichlet: float = 0.0

    @property
    def grid(self):
        return self.domain.grid

    @property
    def mask(self):
        return self.domain.mask

    def interior(self) -> np.ndarray:
        return self.values[self.mask]

    def max(self) -> float:
        return float(self.values[self.mask].max())

    def copy(self) -> "ScalarField":
        return ScalarField(self.values.copy(), self.domain, self.dirichlet)

    @classmethod
    def from_function(cls, domain: ImplicitDomain, func) -> "ScalarField":
        """Sample ``func(points)`` at all cell centers (grid coordinates)."""
        vals = np.asarray(func(domain.grid.points()), dtype=float)
        return cls(vals, domain)

    @classmethod
    def from_interior(cls, domain: ImplicitDomain, values: np.ndarray) -> "ScalarField":
        """Wrap interior values and fill the exterior by linear extrapolation."""
        full = np.where(domain.mask, values, 0.0)
        return cls(extend_outside(full, domain), domain)

    def gradient(self):
        return centered_gradient(self.values, self.grid)

    def gradient_norm(self) -> np.ndarray:
        return np.sqrt(sum(g * g for g in self.gradient()))


def shift(a: np.ndarray, axis: int, step: int, mirror_low=False) -> np.ndarray:
    """``out[i] = a[i + step*e_axis]``; out-of-range cells copy the edge.

    With ``mirror_low`` the low edge is reflected (the rho = 0 axis).
    """
    out = np.empty_like(a)
    n = a.shape[axis]
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    if step > 0:
        src[axis] = slice(step, n)
        dst[axis] = slice(0, n - step)
        out[tuple(dst)] = a[tuple(src)]
        src[axis] = slice(n - 1, n)
        dst[axis] = slice(n - step, n)
        out[tuple(dst)] = a[tuple(src)]
    else:
        k = -step
        src[axis] = slice(0, n - k)
        dst[axis] = slice(k, n)
        out[tuple(dst)] = a[tuple(src)]
        dst[axis] = slice(0, k)
        if mirror_low:
            src[axis] = slice(k - 1, None, -1) if k > 1 else slice(0, 1)
        else:
            src[axis] = slice(0, 1)
        out[tuple(dst)] = a[tuple(src)]
    return out


def centered_gradient(values: np.ndarray, grid):
    """Centered differences on the full grid (mirror at rho = 0)."""
    grads = []
    for ax, h in enumerate(grid.spacing):
        mirror = grid.mode == "axisymmetric" and ax == 0
        up = shift(values, ax, 1)
        dn = shift(values, ax, -1, mirror_low=mirror)
        g = (up - dn) / (2 * h)
        # one-sided at the outer box faces
        sl_hi = [slice(None)] * values.ndim
        sl_hi[ax] = -1
        sl_hi = tuple(sl_hi)
        g[sl_hi] = (values[sl_hi] - dn[sl_hi]) / h
        if not mirror:
            sl_lo = [slice(None)] * values.ndim
            sl_lo[ax] = 0
            sl_lo = tuple(sl_lo)
            g[sl_lo] = (up[sl_lo] - values[sl_lo]) / h
        grads.append(g)
    return grads


def boundary_fractions(domain: ImplicitDomain):
    """Per axis and direction, the fraction theta in (0, 1] of the way from an
    interior cell to its exterior neighbor at which psi crosses zero.

    Returns a dict keyed by (axis, step) of arrays; cells whose neighbor in
    that direction is interior (or out of the box) carry 1.
    """
    psi = domain.psi
    mask = domain.mask
    grid = domain.grid
    out = {}
    for ax in range(grid.ndim):
        for step in (1, -1):
            mirror = grid.mode == "axisymmetric" and ax == 0 and step == -1
            nb_psi = shift(psi, ax, step, mirror_low=mirror)
            nb_in = shift(mask, ax, step, mirror_low=mirror)
            cut = mask & ~nb_in
            theta = np.ones(psi.shape)
            with np.errstate(divide="ignore", invalid="ignore"):
                frac = psi / (psi - nb_psi)
            theta[cut] = np.clip(frac[cut], THETA_MIN, 1.0)
            out[(ax, step)] = theta
    return out


def extend_outside(values: np.ndarray, domain: ImplicitDomain, layers=3) -> np.ndarray:
    """Fill exterior cells by extrapolating linearly in psi through the boundary.

    A cell next to the domain gets ``u_i * psi_j / psi_i`` averaged over its
    axis neighbors i already filled, which is the solver's ghost value. Cells
    beyond ``layers`` get the most negative filled value.
    """
    grid = domain.grid
    psi = domain.psi
    filled = domain.mask.copy()
    out = np.where(filled, values, 0.0).astype(float)
    h = grid.h
    for _ in range(layers):
        acc = np.zeros(out.shape)
        cnt = np.zeros(out.shape)
        for ax in range(grid.ndim):
            for step in (1, -1):
                mirror = grid.mode == "axisymmetric" and ax == 0 and step == -1
                nb_f = shift(filled, ax, step, mirror_low=mirror)
                nb_u = shift(out, ax, step, mirror_low=mirror)
                nb_p = shift(psi, ax, step, mirror_low=mirror)
                ok = ~filled & nb_f & (np.abs(nb_p) > THETA_MIN * h)
                with np.errstate(divide="ignore", invalid="ignore"):
                    est = nb_u * psi / nb_p
                acc[ok] += est[ok]
                cnt[ok] += 1
        new = ~filled & (cnt > 0)
        if not new.any():
            break
        out[new] = acc[new] / cnt[new]
        filled |= new
    if not filled.all():
        floor = min(float(out[filled].min()), 0.0)
        out[~filled] = floor
    return out
