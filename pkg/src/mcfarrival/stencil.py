"""Conservative finite-difference operator for the regularized arrival-time equation.

The residual at an interior cell is

    R(u) = div( Du / sqrt(eps^2 + |Du|^2) ) + 1 / sqrt(eps^2 + |Du|^2)

with face fluxes built from the normal difference across the face and the
average of the two cell-centered tangential differences. Dirichlet data
u = 0 enters through ghost values extrapolated linearly through the zero
crossing of psi on each cut edge. In axisymmetric mode axis 0 is rho and
the divergence carries the rho weights.

Everything is written for arrays of any dimension and any dtype, so the
same code evaluates the lifted equation on Omega x R (one extra axis with
eps = 0) and supports complex-step differentiation for the Jacobian.
"""

from __future__ import annotations

import itertools

import numpy as np
import scipy.sparse as sp

from .fields import boundary_fractions, shift

COMPLEX_STEP = 1e-25
VARIANTS = ("face", "cell")


class StarOperator:
    """Discrete (star_eps) operator on a masked grid.

    ``variant="face"`` evaluates sqrt(eps^2 + |Du|^2) from the face gradient
    (the production stencil); ``variant="cell"`` averages the two
    cell-centered values instead and serves as the independent second route.
    """

    def __init__(self, mask, theta, spacing, radial_rho=None):
        self.mask = np.asarray(mask, dtype=bool)
        self.ndim = self.mask.ndim
        self.theta = theta
        self.spacing = tuple(float(h) for h in spacing)
        self.radial_rho = radial_rho
        self.nbr_in = {}
        self.ghost = {}
        for ax in range(self.ndim):
            for step in (1, -1):
                mirror = self._mirror(ax, step)
                nb = shift(self.mask, ax, step, mirror_low=mirror)
                if not mirror and step == 1:
                    nb = nb.copy()
                    sl = [slice(None)] * self.ndim
                    sl[ax] = -1
                    nb[tuple(sl)] = False
                elif not mirror:
                    nb = nb.copy()
                    sl = [slice(None)] * self.ndim
                    sl[ax] = 0
                    nb[tuple(sl)] = False
                self.nbr_in[(ax, step)] = nb
                self.ghost[(ax, step)] = 1.0 - 1.0 / theta[(ax, step)]
        self.cut = self.mask & ~np.logical_and.reduce(
            [self.nbr_in[k] for k in self.nbr_in])
        # Dirichlet data on the boundary (None means 0)
        self.dirichlet = None
        self.index = np.full(self.mask.shape, -1, dtype=np.int64)
        self.index[self.mask] = np.arange(int(self.mask.sum()))
        self._pattern = None
        if radial_rho is not None:
            h = self.spacing[0]
            rc = np.asarray(radial_rho, dtype=float)
            shape = [1] * self.ndim
            shape[0] = -1
            self._rc = rc.reshape(shape)
            self._rp = (rc + 0.5 * h).reshape(shape)
            self._rm = np.maximum(rc - 0.5 * h, 0.0).reshape(shape)

    @classmethod
    def for_domain(cls, domain):
        grid = domain.grid
        rho = grid.axes()[0] if grid.mode == "axisymmetric" else None
        return cls(domain.mask, boundary_fractions(domain), grid.spacing, rho)

    @property
    def size(self) -> int:
        return int(self.mask.sum())

    def _mirror(self, ax, step):
        return self.radial_rho is not None and ax == 0 and step == -1

    def lifted(self, layers=3, dz=1.0) -> "StarOperator":
        """Operator on the product grid with one extra trailing axis.

        Boundary data for the lifted problem is set through ``dirichlet``.
        """
        mask = np.repeat(self.mask[..., None], layers, axis=-1)
        theta = {k: np.repeat(v[..., None], layers, axis=-1) for k, v in self.theta.items()}
        ones = np.ones(mask.shape)
        theta[(self.ndim, 1)] = ones
        theta[(self.ndim, -1)] = ones
        op = StarOperator(mask, theta, self.spacing + (dz,), self.radial_rho)
        # the extra axis is periodic-free: every cell's z-neighbors count as interior
        for step in (1, -1):
            op.nbr_in[(self.ndim, step)] = mask.copy()
        op.cut = self.cut[..., None].repeat(layers, axis=-1)
        op.dirichlet = None if self.dirichlet is None else np.repeat(
            np.asarray(self.dirichlet)[..., None], layers, axis=-1)
        return op

    # ------------------------------------------------------------------
    def neighbor(self, u, ax, step):
        """Neighbor values with ghost extrapolation across cut edges."""
        nb = shift(u, ax, step, mirror_low=self._mirror(ax, step))
        factor = self.ghost[(ax, step)]
        if self.dirichlet is None:
            ghost = factor * u
        else:
            ghost = self.dirichlet + factor * (u - self.dirichlet)
        return np.where(self.nbr_in[(ax, step)], nb, ghost)

    def cell_gradient(self, u):
        return [(self.neighbor(u, ax, 1) - self.neighbor(u, ax, -1)) / (2 * h)
                for ax, h in enumerate(self.spacing)]

    def _fluxes(self, u, eps, variant, frozen):
        g = self.cell_gradient(u)
        e2 = eps * eps
        wc = np.sqrt(e2 + sum(gi * gi for gi in g)) if frozen is None else frozen["cell"]
        plus, minus, wplus, wminus = [], [], [], []
        for ax, h in enumerate(self.spacing):
            inside = self.nbr_in[(ax, 1)]
            normal_p = (self.neighbor(u, ax, 1) - u) / h
            normal_m = (u - self.neighbor(u, ax, -1)) / h
            own_t2 = sum(g[b] * g[b] for b in range(self.ndim) if b != ax)
            if frozen is not None:
                wp = frozen["plus"][ax]
                wm = frozen["minus"][ax]
            else:
                wm = np.sqrt(e2 + normal_m * normal_m + own_t2)
                if variant == "face":
                    avg_t2 = sum(
                        (0.5 * (g[b] + shift(g[b], ax, 1))) ** 2
                        for b in range(self.ndim) if b != ax
                    )
                    t2 = np.where(inside, avg_t2, own_t2) if self.ndim > 1 else own_t2
                    wp = np.sqrt(e2 + normal_p * normal_p + t2)
                else:
                    wb = np.sqrt(e2 + normal_p * normal_p + own_t2)
                    wp = np.where(inside, 0.5 * (wc + shift(wc, ax, 1)), wb)
            fp = normal_p / wp
            fm_boundary = normal_m / wm
            fm = np.where(self.nbr_in[(ax, -1)], shift(fp, ax, -1), fm_boundary)
            plus.append(fp)
            minus.append(fm)
            wplus.append(wp)
            wminus.append(wm)
        return g, wc, plus, minus, wplus, wminus

    def residual(self, u, eps, variant="face", frozen=None):
        """Residual on the full grid (zero at exterior cells)."""
        if variant not in VARIANTS:
            raise ValueError(f"unknown stencil variant {variant!r}")
        with np.errstate(divide="ignore", invalid="ignore"):
            return self._residual(u, eps, variant, frozen)

    def _residual(self, u, eps, variant, frozen):
        _, wc, plus, minus, _, _ = self._fluxes(u, eps, variant, frozen)
        div = 0.0
        for ax, h in enumerate(self.spacing):
            if self.radial_rho is not None and ax == 0:
                div = div + (self._rp * plus[ax] - self._rm * minus[ax]) / (h * self._rc)
            else:
                div = div + (plus[ax] - minus[ax]) / h
        res = div + 1.0 / wc
        return np.where(self.mask, res, 0.0)

    def frozen_coefficients(self, u, eps, variant="face"):
        """Lagged sqrt(eps^2 + |Du|^2) values for a Picard step."""
        ur = np.real(u)
        _, wc, _, _, wp, wm = self._fluxes(ur, eps, variant, None)
        return {"cell": wc, "plus": wp, "minus": wm}

    # ------------------------------------------------------------------
    def _sparsity(self, reach=1):
        """Coloring of the residual dependence pattern (box of half-width ``reach``)."""
        if self._pattern is None:
            self._pattern = {}
        if reach in self._pattern:
            return self._pattern[reach]
        shape = self.mask.shape
        grids = np.meshgrid(*[np.arange(n) for n in shape], indexing="ij")
        m = 2 * reach + 1
        pattern = []
        rows_full = self.index
        for color in itertools.product(range(m), repeat=self.ndim):
            pert = self.mask.copy()
            for ax, c in enumerate(color):
                pert &= (grids[ax] % m) == c
            # column owning row i under this color: the unique neighbor with that residue
            tgt = []
            valid = self.mask.copy()
            for ax, c in enumerate(color):
                off = (c - grids[ax] + reach) % m - reach
                j = grids[ax] + off
                valid &= (j >= 0) & (j < shape[ax])
                tgt.append(np.clip(j, 0, shape[ax] - 1))
            col_full = self.index[tuple(tgt)]
            valid &= col_full >= 0
            pattern.append((pert, valid, rows_full[valid], col_full[valid]))
        self._pattern[reach] = pattern
        return pattern

    def jacobian(self, u, eps, variant="face", frozen=None):
        """Exact Jacobian by colored complex-step differentiation (CSR)."""
        u = np.asarray(u, dtype=float)
        data, rr, cc = [], [], []
        # the cell variant averages cell-centered W, which sees two cells out
        reach = 2 if variant == "cell" and frozen is None else 1
        for pert, valid, rows, cols in self._sparsity(reach):
            uc = u + 1j * COMPLEX_STEP * pert
            r = self.residual(uc, eps, variant, frozen)
            vals = r.imag[valid] / COMPLEX_STEP
            keep = vals != 0
            data.append(vals[keep])
            rr.append(rows[keep])
            cc.append(cols[keep])
        n = self.size
        jac = sp.coo_matrix(
            (np.concatenate(data), (np.concatenate(rr), np.concatenate(cc))), shape=(n, n)
        )
        return jac.tocsr()

    def scatter(self, vec):
        full = np.zeros(self.mask.shape)
        full[self.mask] = vec
        return full
