"""Grids, quadrature, and conservative face fluxes.

All solvers in this package are cell-centered finite volume schemes: cell
averages are advanced by explicit Euler steps of flux divergences plus local
reaction terms. Faces on the domain boundary, and faces touching a masked
cell, carry zero total flux, so mass changes only through reactions.

Fluxes use first-order upwinding for advection and second-order central
differences for diffusion. Face arrays returned by the flux helpers have one
more entry than cells along the flux axis, with zeros at both boundary faces;
the divergence of such an array telescopes to zero when summed over cells,
which is the conservation property the tests pin down.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Union

import numpy as np

from .errors import ZeroMass

# Below this total mass a population counts as extinct and means are undefined.
ZERO_MASS_TOL = 1e-30


@dataclass(frozen=True)
class Grid1:
    """Uniform cell-centered grid of ``n_cells`` cells on ``[lo, hi]``."""

    n_cells: int
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self) -> None:
        if self.n_cells < 1:
            raise ValueError("n_cells must be >= 1")
        if not self.hi > self.lo:
            raise ValueError("hi must exceed lo")

    @property
    def cell_width(self) -> float:
        return (self.hi - self.lo) / self.n_cells

    @cached_property
    def centers(self) -> np.ndarray:
        w = self.cell_width
        return self.lo + (np.arange(self.n_cells) + 0.5) * w

    @cached_property
    def faces(self) -> np.ndarray:
        return self.lo + np.arange(self.n_cells + 1) * self.cell_width


@dataclass(frozen=True)
class MaskedGrid3:
    """Cell-centered grid on [0,1]^3 for the traits (x, y, theta).

    The (x, y) section excludes the quarter disk around (1, 1): a cell is
    active exactly when its center satisfies (x-1)^2 + (y-1)^2 > 1. The mask
    depends only on (x, y); every theta layer shares it.
    """

    nx: int
    ny: int
    ntheta: int

    @cached_property
    def axes(self) -> tuple[Grid1, Grid1, Grid1]:
        return Grid1(self.nx), Grid1(self.ny), Grid1(self.ntheta)

    @cached_property
    def section_mask(self) -> np.ndarray:
        """(nx, ny) boolean, True where the (x, y) cell center lies in the domain."""
        gx, gy, _ = self.axes
        x = gx.centers[:, None]
        y = gy.centers[None, :]
        return (x - 1.0) ** 2 + (y - 1.0) ** 2 > 1.0

    @cached_property
    def active(self) -> np.ndarray:
        """(nx, ny, ntheta) boolean cell-inclusion mask."""
        return np.broadcast_to(self.section_mask[:, :, None], self.shape).copy()

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.ntheta)

    @property
    def cell_volume(self) -> float:
        gx, gy, gt = self.axes
        return gx.cell_width * gy.cell_width * gt.cell_width

    @property
    def cell_widths(self) -> tuple[float, float, float]:
        gx, gy, gt = self.axes
        return gx.cell_width, gy.cell_width, gt.cell_width

    @cached_property
    def center_meshes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Cell-center coordinate arrays X, Y, T, each of shape (nx, ny, ntheta)."""
        gx, gy, gt = self.axes
        return np.meshgrid(gx.centers, gy.centers, gt.centers, indexing="ij")


AnyGrid = Union[Grid1, MaskedGrid3]


@dataclass
class DensityField:
    """Cell-averaged density on a grid; zero on masked cells by construction."""

    grid: AnyGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if isinstance(self.grid, MaskedGrid3):
            if values.shape != self.grid.shape:
                raise ValueError(f"values shape {values.shape} != grid shape {self.grid.shape}")
            values = np.where(self.grid.active, values, 0.0)
        else:
            if values.shape != (self.grid.n_cells,):
                raise ValueError(f"values shape {values.shape} != ({self.grid.n_cells},)")
        self.values = values

    @property
    def cell_volume(self) -> float:
        if isinstance(self.grid, MaskedGrid3):
            return self.grid.cell_volume
        return self.grid.cell_width


def integrate(field: DensityField) -> float:
    """Midpoint-rule integral: sum of cell values times cell volume."""
    return float(field.values.sum()) * field.cell_volume


def weighted_mean(field: DensityField, weight: Callable[..., np.ndarray]) -> float:
    """Density-weighted mean of ``weight`` over the grid.

    ``weight`` receives cell-center coordinates: ``weight(p)`` on a Grid1,
    ``weight(x, y, theta)`` on a MaskedGrid3, each vectorized over arrays.

    Raises
    ------
    ZeroMass
        If the field's total mass is at or below ``ZERO_MASS_TOL``.
    """
    mass = integrate(field)
    if mass <= ZERO_MASS_TOL:
        raise ZeroMass(f"total mass {mass:g} too small for a mean")
    if isinstance(field.grid, MaskedGrid3):
        w = weight(*field.grid.center_meshes)
    else:
        w = weight(field.grid.centers)
    return float((np.asarray(w) * field.values).sum()) * field.cell_volume / mass


def _interior_pair(values: np.ndarray, axis: int) -> tuple[np.ndarray, np.ndarray]:
    n = values.shape[axis]
    left = np.take(values, np.arange(n - 1), axis=axis)
    right = np.take(values, np.arange(1, n), axis=axis)
    return left, right


def _pad_faces(interior: np.ndarray, axis: int) -> np.ndarray:
    """Insert zero boundary faces at both ends along ``axis``."""
    pad = [(0, 0)] * interior.ndim
    pad[axis] = (1, 1)
    return np.pad(interior, pad)


def advective_flux_along(
    values: np.ndarray,
    face_velocity: np.ndarray,
    axis: int = 0,
    active: np.ndarray | None = None,
) -> np.ndarray:
    """First-order upwind face fluxes of ``v * n`` along one axis.

    ``face_velocity`` holds one velocity per interior face (size along
    ``axis`` one less than ``values``). The returned array has one face more
    than cells along ``axis``; boundary faces and faces touching an inactive
    cell are zero, so the scheme is conservative and masked cells stay empty.
    """
    left, right = _interior_pair(values, axis)
    v = np.asarray(face_velocity, dtype=float)
    interior = np.where(v >= 0.0, v * left, v * right)
    if active is not None:
        a_left, a_right = _interior_pair(active, axis)
        interior = np.where(a_left & a_right, interior, 0.0)
    return _pad_faces(interior, axis)


def diffusive_flux_along(
    values: np.ndarray,
    face_coeff: np.ndarray | float,
    cell_width: float,
    axis: int = 0,
    active: np.ndarray | None = None,
) -> np.ndarray:
    """Central-difference face fluxes ``-a * dn/dz`` along one axis.

    Same face layout and masking rules as :func:`advective_flux_along`.
    """
    left, right = _interior_pair(values, axis)
    interior = -np.asarray(face_coeff, dtype=float) * (right - left) / cell_width
    if active is not None:
        a_left, a_right = _interior_pair(active, axis)
        interior = np.where(a_left & a_right, interior, 0.0)
    return _pad_faces(interior, axis)


def advective_flux_1d(
    values: np.ndarray, face_velocity: np.ndarray, active: np.ndarray | None = None
) -> np.ndarray:
    """Upwind fluxes on a 1D cell array; zero flux at both boundary faces."""
    return advective_flux_along(np.asarray(values, dtype=float), face_velocity, 0, active)


def diffusive_flux_1d(
    values: np.ndarray,
    face_coeff: np.ndarray | float,
    cell_width: float,
    active: np.ndarray | None = None,
) -> np.ndarray:
    """Central diffusive fluxes on a 1D cell array; zero at boundary faces."""
    return diffusive_flux_along(np.asarray(values, dtype=float), face_coeff, cell_width, 0, active)


def divergence_along(face_fluxes: np.ndarray, cell_width: float, axis: int = 0) -> np.ndarray:
    """Per-cell flux divergence (F_right - F_left) / dz along one axis."""
    return np.diff(face_fluxes, axis=axis) / cell_width


def face_average_along(cell_values: np.ndarray, axis: int = 0) -> np.ndarray:
    """Interior-face values as the mean of the two adjacent cell values."""
    left, right = _interior_pair(np.asarray(cell_values, dtype=float), axis)
    return 0.5 * (left + right)
