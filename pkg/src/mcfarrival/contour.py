"""Level-set contouring on cell-centered grids.

Marching squares (2D) and marching cubes (3D) come from scikit-image.
This module converts their index-space output into physical elements
with quadrature weights. In axisymmetric mode a (rho, z) segment
carries the weight ``2*pi*rho_mid*length``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from skimage import measure


@dataclass
class Elements:
    """Polyline segments (2D grids) or triangles (3D grids) of one contour.

    ``vertices`` has shape (m, 2, k) for segments and (m, 3, 3) for
    triangles, where k is the grid dimension. ``points`` are element
    midpoints (centroids) and ``weights`` the element measures.
    """

    vertices: np.ndarray
    points: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return len(self.weights)

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def select(self, keep: np.ndarray) -> "Elements":
        return Elements(self.vertices[keep], self.points[keep], self.weights[keep])


def _empty(k: int, nv: int) -> Elements:
    return Elements(np.zeros((0, nv, k)), np.zeros((0, k)), np.zeros(0))


def _segments_2d(data, level, lower, spacing):
    if not (np.nanmin(data) < level < np.nanmax(data)):
        return np.zeros((0, 2, 2))
    segs = []
    for line in measure.find_contours(data, level):
        if len(line) < 2:
            continue
        pts = lower + (line + 0.5) * spacing
        segs.append(np.stack([pts[:-1], pts[1:]], axis=1))
    if not segs:
        return np.zeros((0, 2, 2))
    return np.concatenate(segs, axis=0)


def _clip_rho(segs):
    """Keep the rho >= 0 part of mirrored (rho, z) segments."""
    ra, rb = segs[:, 0, 0], segs[:, 1, 0]
    segs = segs[(ra >= 0) | (rb >= 0)].copy()
    ra, rb = segs[:, 0, 0], segs[:, 1, 0]
    cross = (ra < 0) | (rb < 0)
    if np.any(cross):
        a, b = segs[cross, 0], segs[cross, 1]
        s = ra[cross] / (ra[cross] - rb[cross])
        p0 = a + s[:, None] * (b - a)
        p0[:, 0] = 0.0
        neg_a = ra[cross] < 0
        fixed = segs[cross]
        fixed[neg_a, 0] = p0[neg_a]
        fixed[~neg_a, 1] = p0[~neg_a]
        segs[cross] = fixed
    return segs


def corner_average(values: np.ndarray) -> np.ndarray:
    """Average of the 2^d cells around every interior cell corner."""
    out = values
    for ax in range(values.ndim):
        lo = [slice(None)] * values.ndim
        hi = [slice(None)] * values.ndim
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        out = 0.5 * (out[tuple(lo)] + out[tuple(hi)])
    return out


def extract(values: np.ndarray, level: float, grid, dual: bool = False) -> Elements:
    """Contour ``values`` (sampled at the cell centers of ``grid``) at ``level``.

    With ``dual=True`` the data is first averaged onto cell corners, which
    gives a second, equally accurate contour used for error estimates.
    """
    lower = np.asarray(grid.lower, dtype=float)
    spacing = np.asarray(grid.spacing, dtype=float)
    axisym = grid.mode == "axisymmetric"
    data = values
    if axisym:
        data = np.concatenate([values[::-1], values], axis=0)
        lower = lower.copy()
        lower[0] -= values.shape[0] * spacing[0]
    if dual:
        data = corner_average(data)
        lower = lower + 0.5 * spacing
    if grid.ndim == 2:
        segs = _segments_2d(data, level, lower, spacing)
        if axisym and len(segs):
            segs = _clip_rho(segs)
        if not len(segs):
            return _empty(2, 2)
        mid = 0.5 * (segs[:, 0] + segs[:, 1])
        length = np.linalg.norm(segs[:, 1] - segs[:, 0], axis=1)
        if axisym:
            length = 2.0 * np.pi * mid[:, 0] * length
        keep = length > 0
        return Elements(segs[keep], mid[keep], length[keep])
    if grid.ndim == 3:
        if not (np.nanmin(data) < level < np.nanmax(data)):
            return _empty(3, 3)
        verts, faces, _, _ = measure.marching_cubes(
            data, level, spacing=tuple(spacing), allow_degenerate=False
        )
        tri = (verts + lower + 0.5 * spacing)[faces]
        area = 0.5 * np.linalg.norm(
            np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1
        )
        keep = area > 0
        return Elements(tri[keep], tri[keep].mean(axis=1), area[keep])
    raise ValueError(f"contouring supports 2D and 3D grids, got {grid.ndim}D")
