"""Three-trait phenotype dynamics with plasticity-dependent mutation.

The population density n(t, x, y, theta) lives on the unit cube minus the
cylinder over the disk of radius 1 around (x, y) = (1, 1).  It obeys an
advection-diffusion-reaction law: drift V tears the x and y traits apart
across the diagonal while pushing the plasticity theta down, the mutation
rates a11, a22 grow with theta, and growth is logistic through the total
mass, (r(z) - d(z) rho(t)) n.  Zero total flux through the domain boundary
and the mask keeps transport conservative.

The discretization is a cell-centered finite-volume scheme: first-order
upwind advection, central diffusion, explicit Euler in time with a
positivity-preserving step bound.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import CflViolation, EmptySupport, NonFiniteState
from .numerics import (
    DensityField,
    MaskedGrid3,
    advective_flux_along,
    diffusive_flux_along,
    divergence_along,
    face_average_along,
    integrate,
    weighted_mean,
)

DEFAULT_RESOLUTION = (40, 40, 20)
CFL_SAFETY = 0.9
MODE_THRESHOLD = 0.1


def default_growth(x, y, theta):
    """Two ridges separated by the diagonal y = x, continuous across it,
    peaking toward (0.1, 0.9) on one side and (0.9, 0.1) on the other."""
    above = np.exp(-((0.1 - x) ** 2) - (0.9 - y) ** 2)
    below = np.exp(-((0.1 - y) ** 2) - (0.9 - x) ** 2)
    return np.where(y > x, above, below)


def default_death(x, y, theta):
    return np.full_like(np.asarray(x, dtype=float), 0.5)


def default_diffusion(theta):
    """Plasticity raises the mutation rate of x and y; theta mutates slowly."""
    theta = np.asarray(theta, dtype=float)
    a_trait = 1e-6 * (theta + 1.0)
    return a_trait, a_trait, np.full_like(theta, 1e-6)


def default_advection(t, x, y, theta):
    """Drift tearing x and y apart across the diagonal, lowering theta."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return -1e-3 * y, -1e-3 * x, -1e-3 * (x + y)


def theta_scaled_advection(t, x, y, theta):
    """Same drift as :func:`default_advection`, modulated by plasticity."""
    v1, v2, v3 = default_advection(t, x, y, theta)
    theta = np.asarray(theta, dtype=float)
    return theta * v1, theta * v2, theta * v3


@dataclass(frozen=True)
class PhenotypeModel:
    """Coefficients and initial bump of the phenotype equation.

    All coefficient functions are vectorized over coordinate arrays;
    ``diffusion`` maps theta to the three diagonal coefficients and
    ``advection`` receives the time as its first argument.
    """

    growth_rate: Callable = default_growth
    death_rate: Callable = default_death
    diffusion: Callable = default_diffusion
    advection: Callable = default_advection
    initial_center: tuple[float, float, float] = (0.25, 0.25, 0.5)
    initial_radius: float = 0.025
    initial_mass: float = 1.0

    def __post_init__(self) -> None:
        if self.initial_radius <= 0.0:
            raise ValueError("initial_radius must be positive")
        if self.initial_mass <= 0.0:
            raise ValueError("initial_mass must be positive")


@dataclass(frozen=True)
class PhenotypeSimState:
    field: DensityField
    time: float
    rho: float


def init_density(grid: MaskedGrid3, model: PhenotypeModel) -> PhenotypeSimState:
    """Compactly supported smooth bump around the initial center.

    n0 = a * exp(-1/(1 - f)) on {f < 1}, f the squared distance to the
    center over the squared radius, with a chosen so the discrete mass
    equals initial_mass.  A support ball that contains no cell center
    (coarse grid, small radius) raises EmptySupport instead of silently
    creating an empty population; note the default 0.025 radius needs
    roughly 40 cells per axis, including the theta axis.
    """
    x, y, theta = grid.center_meshes
    cx, cy, ct = model.initial_center
    f = ((x - cx) ** 2 + (y - cy) ** 2 + (theta - ct) ** 2) / model.initial_radius**2
    inside = (f < 1.0) & grid.active
    if not inside.any():
        raise EmptySupport(
            f"no cell center within {model.initial_radius:g} of {model.initial_center}"
        )
    values = np.zeros(grid.shape)
    values[inside] = np.exp(-1.0 / (1.0 - f[inside]))
    mass = integrate(DensityField(grid, values))
    field = DensityField(grid, values * (model.initial_mass / mass))
    return PhenotypeSimState(field, 0.0, integrate(field))


@lru_cache(maxsize=8)
def _reaction_fields(grid: MaskedGrid3, model: PhenotypeModel):
    x, y, theta = grid.center_meshes
    r = np.broadcast_to(np.asarray(model.growth_rate(x, y, theta), dtype=float), grid.shape)
    d = np.broadcast_to(np.asarray(model.death_rate(x, y, theta), dtype=float), grid.shape)
    return r, d


@lru_cache(maxsize=8)
def _diffusion_fields(grid: MaskedGrid3, model: PhenotypeModel):
    _, _, theta = grid.center_meshes
    components = model.diffusion(theta)
    cells = []
    for a in components:
        a = np.broadcast_to(np.asarray(a, dtype=float), grid.shape)
        if (a[grid.active] < 0.0).any():
            raise ValueError("diffusion coefficients must be nonnegative")
        cells.append(a)
    faces = tuple(face_average_along(cells[axis], axis) for axis in range(3))
    return tuple(cells), faces


def _advection_fields(time: float, grid: MaskedGrid3, model: PhenotypeModel):
    x, y, theta = grid.center_meshes
    components = model.advection(time, x, y, theta)
    cells = tuple(
        np.broadcast_to(np.asarray(v, dtype=float), grid.shape) for v in components
    )
    faces = tuple(face_average_along(cells[axis], axis) for axis in range(3))
    return cells, faces


def stable_dt(state: PhenotypeSimState, model: PhenotypeModel) -> float:
    """Positivity bound: min over cells of
    1 / (sum |V_i|/dz_i + sum 2 a_ii/dz_i^2 + |r - d rho|)."""
    grid = state.field.grid
    r, d = _reaction_fields(grid, model)
    diff_cells, _ = _diffusion_fields(grid, model)
    adv_cells, _ = _advection_fields(state.time, grid, model)
    widths = grid.cell_widths
    rate = np.abs(r - d * state.rho)
    for axis in range(3):
        rate = rate + np.abs(adv_cells[axis]) / widths[axis]
        rate = rate + 2.0 * diff_cells[axis] / widths[axis] ** 2
    peak = float(rate[grid.active].max())
    return math.inf if peak == 0.0 else 1.0 / peak


def step(state: PhenotypeSimState, model: PhenotypeModel, dt: float) -> PhenotypeSimState:
    """One explicit finite-volume update.

    Upwind advection plus central diffusion with zero total flux through
    the domain boundary and mask faces; reaction (r - d rho) n with rho
    lagged at its start-of-step value.  dt above the bound reported by
    :func:`stable_dt` raises CflViolation.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    bound = stable_dt(state, model)
    if dt > bound:
        raise CflViolation(f"dt={dt:g} exceeds the stability bound {bound:g}")
    grid = state.field.grid
    widths = grid.cell_widths
    r, d = _reaction_fields(grid, model)
    _, diff_faces = _diffusion_fields(grid, model)
    _, adv_faces = _advection_fields(state.time, grid, model)
    n = state.field.values
    divergence = np.zeros_like(n)
    for axis in range(3):
        flux = advective_flux_along(n, adv_faces[axis], axis=axis, active=grid.active)
        flux += diffusive_flux_along(n, diff_faces[axis], widths[axis], axis=axis, active=grid.active)
        divergence += divergence_along(flux, widths[axis], axis=axis)
    new_values = n + dt * ((r - d * state.rho) * n - divergence)
    if not np.isfinite(new_values[grid.active]).all():
        raise NonFiniteState(f"non-finite density at t={state.time + dt:g}")
    field = DensityField(grid, new_values)
    return PhenotypeSimState(field, state.time + dt, integrate(field))


def _snapshot_times(t_end: float, snapshot_every: float | None) -> list[float]:
    if t_end <= 0.0:
        return [0.0]
    if snapshot_every is None or snapshot_every <= 0.0 or snapshot_every > t_end:
        times = [0.0]
    else:
        count = int(math.floor(t_end / snapshot_every + 1e-9))
        times = [k * snapshot_every for k in range(count + 1)]
    if t_end - times[-1] > 1e-9 * max(1.0, t_end):
        times.append(t_end)
    return times


def run(
    model: PhenotypeModel,
    resolution: tuple[int, int, int] = DEFAULT_RESOLUTION,
    t_end: float = 1.0,
    snapshot_every: float | None = None,
    dt_max: float | None = None,
    initial_field: DensityField | None = None,
) -> list[PhenotypeSimState]:
    """March to t_end with automatic steps, collecting snapshots.

    dt is 0.9 times the stability bound, capped by dt_max and the remaining
    time.  Pass dt_max when the bound is loose (it diverges where transport
    and net reaction both vanish, e.g. at the logistic equilibrium).
    Snapshots are the states nearest each multiple of snapshot_every and
    always include t = 0 and the final time.  initial_field replaces the
    model's bump; its grid then takes precedence over ``resolution``.
    """
    if t_end < 0.0:
        raise ValueError("t_end must be >= 0")
    if initial_field is not None:
        state = PhenotypeSimState(initial_field, 0.0, integrate(initial_field))
    else:
        state = init_density(MaskedGrid3(*resolution), model)
    targets = _snapshot_times(t_end, snapshot_every)
    snapshots = [state]
    next_target = 1
    slack = 1e-12 * max(1.0, t_end)
    while state.time < t_end - slack:
        dt = CFL_SAFETY * stable_dt(state, model)
        if dt_max is not None:
            dt = min(dt, dt_max)
        dt = min(dt, t_end - state.time)
        previous = state
        state = step(state, model, dt)
        while next_target < len(targets) and targets[next_target] <= state.time + slack:
            near = targets[next_target]
            pick = previous if abs(previous.time - near) < abs(state.time - near) else state
            snapshots.append(pick)
            next_target += 1
    if snapshots[-1] is not state:
        snapshots.append(state)
    return snapshots


# ---------------------------------------------------------------------------
# summaries


@dataclass(frozen=True)
class Mode:
    x: float
    y: float
    value: float


@dataclass(frozen=True)
class SummaryRecord:
    rho: float
    mean_x: float
    mean_y: float
    mean_theta: float
    var_x: float
    var_y: float
    var_theta: float
    n_modes: int
    modes: tuple[Mode, ...]


_NEIGHBOR_SHIFTS = tuple(
    (di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1) if (di, dj) != (0, 0)
)


def _marginal_modes(marginal, active, x_centers, y_centers, threshold=MODE_THRESHOLD):
    """Plateau-aware local maxima of the xy-marginal.

    A mode is a connected group of equal-valued cells, each at least as
    large as all its in-domain neighbors, strictly larger than every
    neighbor outside the group, and above ``threshold`` times the global
    peak.  Groups report their centroid, so a symmetric peak straddling
    cell faces still lands on the symmetry point.
    """
    work = np.where(active, marginal, -np.inf)
    peak = float(work.max())
    if not math.isfinite(peak) or peak <= 0.0:
        return []
    nx, ny = work.shape
    padded = np.full((nx + 2, ny + 2), -np.inf)
    padded[1:-1, 1:-1] = work
    neighbor_peak = np.max(
        [padded[1 + di : nx + 1 + di, 1 + dj : ny + 1 + dj] for di, dj in _NEIGHBOR_SHIFTS],
        axis=0,
    )
    candidate = active & (work >= neighbor_peak) & (work > threshold * peak)
    seen = np.zeros_like(candidate)
    modes = []
    for start in map(tuple, np.argwhere(candidate)):
        if seen[start]:
            continue
        value = work[start]
        seen[start] = True
        stack, cells = [start], []
        while stack:
            a, b = stack.pop()
            cells.append((a, b))
            for di, dj in _NEIGHBOR_SHIFTS:
                na, nb = a + di, b + dj
                if 0 <= na < nx and 0 <= nb < ny and not seen[na, nb] \
                        and candidate[na, nb] and work[na, nb] == value:
                    seen[na, nb] = True
                    stack.append((na, nb))
        group = set(cells)
        strict = all(
            work[a + di, b + dj] < value
            for a, b in cells
            for di, dj in _NEIGHBOR_SHIFTS
            if 0 <= a + di < nx and 0 <= b + dj < ny
            and (a + di, b + dj) not in group and active[a + di, b + dj]
        )
        if not strict:
            continue
        cx = float(np.mean([x_centers[a] for a, _ in cells]))
        cy = float(np.mean([y_centers[b] for _, b in cells]))
        modes.append(Mode(cx, cy, float(value)))
    modes.sort(key=lambda m: (-m.value, m.x, m.y))
    return modes


def summarize(state: PhenotypeSimState) -> SummaryRecord:
    """Mass, trait means and variances, and the xy-marginal's local maxima.

    Raises ZeroMass for an empty population.  ``modes`` holds the top two
    maxima by height; ``n_modes`` counts all of them.
    """
    field = state.field
    mean_x = weighted_mean(field, lambda x, y, t: x)
    mean_y = weighted_mean(field, lambda x, y, t: y)
    mean_theta = weighted_mean(field, lambda x, y, t: t)
    var_x = weighted_mean(field, lambda x, y, t: (x - mean_x) ** 2)
    var_y = weighted_mean(field, lambda x, y, t: (y - mean_y) ** 2)
    var_theta = weighted_mean(field, lambda x, y, t: (t - mean_theta) ** 2)
    grid = field.grid
    theta_width = grid.axes[2].cell_width
    marginal = field.values.sum(axis=2) * theta_width
    modes = _marginal_modes(
        marginal, grid.section_mask, grid.axes[0].centers, grid.axes[1].centers
    )
    return SummaryRecord(
        rho=state.rho,
        mean_x=mean_x,
        mean_y=mean_y,
        mean_theta=mean_theta,
        var_x=var_x,
        var_y=var_y,
        var_theta=var_theta,
        n_modes=len(modes),
        modes=tuple(modes[:2]),
    )
