"""Populations structured by cooperation probability.

Two interacting populations carry densities n_A, n_B over p in [0, 1].
Each drifts toward the other's mean cooperation probability (reciprocity
advection with rates eps_A, eps_B) and grows at the gain-coupled rate

    g_A(p) = r_A(p) + gamma_A(p) * (b * ptilde_B - c * ptilde_A)

and symmetrically for B, where ptilde is the density-weighted mean of p.
Without advection the equations decouple along p and are explicitly
solvable; that closed form drives an extinction / blow-up / critical
trichotomy keyed to the sign of the fitness value

    r(p*) + gamma * (b * p*_other - c * p*_self)

with p* the maximizer of r over the initial support.  See classify_fate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy.optimize import brentq

from .errors import (
    CflViolation,
    ExtinctPopulation,
    NonFiniteState,
    NonUniqueMaximizer,
    RequiresConstantGain,
    RequiresNoAdvection,
    ZeroMass,
)
from .numerics import (
    DensityField,
    Grid1,
    advective_flux_1d,
    divergence_along,
    integrate,
    weighted_mean,
)

Coefficient = Union[float, Callable[[np.ndarray], np.ndarray]]

DEFAULT_CELLS = 400
SCAN_POINTS = 4001
CRIT_TOL = 1e-10
UNIQUENESS_TOL = 1e-8
OVERFLOW_GUARD = 1e15
CFL_SAFETY = 0.9

VERDICT_EXTINCTION = "Extinction"
VERDICT_BLOW_UP = "BlowUp"
VERDICT_CRITICAL = "Critical"


def _eval(coeff: Coefficient, p: np.ndarray) -> np.ndarray:
    if callable(coeff):
        return np.broadcast_to(np.asarray(coeff(p), dtype=float), np.shape(p))
    return np.full(np.shape(p), float(coeff))


@dataclass(frozen=True)
class CoopModel:
    """Model coefficients.

    ``r_*`` and ``n0_*`` are functions of p (vectorized over arrays);
    ``gamma_*``, ``b`` and ``c`` may be constants or functions of p.  The
    analytic machinery (:func:`classify_fate`,
    :func:`analytic_solution_no_advection`) additionally needs the gain
    coefficients constant and the advection rates zero.
    """

    r_A: Callable[[np.ndarray], np.ndarray]
    r_B: Callable[[np.ndarray], np.ndarray]
    n0_A: Callable[[np.ndarray], np.ndarray]
    n0_B: Callable[[np.ndarray], np.ndarray]
    gamma_A: Coefficient = 0.0
    gamma_B: Coefficient = 0.0
    eps_A: float = 0.0
    eps_B: float = 0.0
    b: Coefficient = 2.0
    c: Coefficient = 1.0

    def __post_init__(self) -> None:
        if self.eps_A < 0.0 or self.eps_B < 0.0:
            raise ValueError("advection rates eps_A, eps_B must be >= 0")
        if not callable(self.b) and not callable(self.c):
            if not self.b > self.c > 0.0:
                raise ValueError("need benefit > cost > 0")
        for name in ("gamma_A", "gamma_B"):
            g = getattr(self, name)
            if not callable(g) and g < 0.0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True)
class CoopState:
    """Densities at one time plus their derived scalars."""

    n_A: DensityField
    n_B: DensityField
    time: float
    rho_A: float
    rho_B: float
    ptilde_A: float
    ptilde_B: float
    E_A: float
    E_B: float


def _mean_p(field: DensityField, label: str, time: float) -> float:
    try:
        return weighted_mean(field, lambda p: p)
    except ZeroMass:
        raise ExtinctPopulation(label, time) from None


def _population_gain(field, b, c, pt_self, pt_other):
    if not callable(b) and not callable(c):
        return b * pt_other - c * pt_self
    # p-dependent payoff: report the population-averaged expected gain
    return weighted_mean(field, lambda p: _eval(b, p) * pt_other - _eval(c, p) * pt_self)


def make_state(n_A: DensityField, n_B: DensityField, time: float, model: CoopModel) -> CoopState:
    """Bundle two density fields with their cached scalars.

    Raises ExtinctPopulation when either mass is too small for the mean
    cooperation probability to be defined.
    """
    pt_a = _mean_p(n_A, "A", time)
    pt_b = _mean_p(n_B, "B", time)
    return CoopState(
        n_A=n_A,
        n_B=n_B,
        time=time,
        rho_A=integrate(n_A),
        rho_B=integrate(n_B),
        ptilde_A=pt_a,
        ptilde_B=pt_b,
        E_A=_population_gain(n_A, model.b, model.c, pt_a, pt_b),
        E_B=_population_gain(n_B, model.b, model.c, pt_b, pt_a),
    )


def initial_state(model: CoopModel, n_cells: int = DEFAULT_CELLS) -> CoopState:
    grid = Grid1(n_cells)
    fields = []
    for fn, label in ((model.n0_A, "A"), (model.n0_B, "B")):
        values = np.broadcast_to(np.asarray(fn(grid.centers), dtype=float), grid.centers.shape)
        if (values < 0.0).any():
            raise ValueError(f"initial density for population {label} takes negative values")
        fields.append(DensityField(grid, values.copy()))
    return make_state(fields[0], fields[1], 0.0, model)


def _growth(p, r, gamma, b, c, pt_self, pt_other):
    gain = _eval(b, p) * pt_other - _eval(c, p) * pt_self
    return _eval(r, p) + _eval(gamma, p) * gain


def _dt_bound(grid: Grid1, eps: float, target: float, growth: np.ndarray) -> float:
    # per-cell outflow rate plus reaction magnitude; the update stays
    # positivity-preserving while dt times this rate is below 1
    v = eps * (target - grid.faces[1:-1])
    rate = np.abs(growth).astype(float).copy()
    rate[:-1] += np.maximum(v, 0.0) / grid.cell_width
    rate[1:] += np.maximum(-v, 0.0) / grid.cell_width
    peak = float(rate.max())
    return math.inf if peak == 0.0 else 1.0 / peak


def stable_dt(state: CoopState, model: CoopModel) -> float:
    """Largest dt accepted by :func:`step` from this state (no safety factor)."""
    p = state.n_A.grid.centers
    g_a = _growth(p, model.r_A, model.gamma_A, model.b, model.c, state.ptilde_A, state.ptilde_B)
    g_b = _growth(p, model.r_B, model.gamma_B, model.b, model.c, state.ptilde_B, state.ptilde_A)
    return min(
        _dt_bound(state.n_A.grid, model.eps_A, state.ptilde_B, g_a),
        _dt_bound(state.n_B.grid, model.eps_B, state.ptilde_A, g_b),
    )


def _advance_population(field: DensityField, eps: float, target: float, growth, dt):
    grid = field.grid
    v = eps * (target - grid.faces[1:-1])
    flux = advective_flux_1d(field.values, v)
    div = divergence_along(flux, grid.cell_width)
    new = field.values + dt * (growth * field.values - div)
    # the dt bound keeps the update nonnegative; clip only rounding dust
    return DensityField(grid, np.maximum(new, 0.0))


def step(state: CoopState, model: CoopModel, dt: float) -> CoopState:
    """One forward-Euler step of the coupled system.

    Both populations advance from the same start-of-step means: upwind
    advection toward the opposite mean, explicit reaction with the lagged
    gain, zero flux through both boundaries.  dt above the stability bound
    (see :func:`stable_dt`) raises CflViolation.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    grid = state.n_A.grid
    p = grid.centers
    g_a = _growth(p, model.r_A, model.gamma_A, model.b, model.c, state.ptilde_A, state.ptilde_B)
    g_b = _growth(p, model.r_B, model.gamma_B, model.b, model.c, state.ptilde_B, state.ptilde_A)
    bound = min(
        _dt_bound(grid, model.eps_A, state.ptilde_B, g_a),
        _dt_bound(grid, model.eps_B, state.ptilde_A, g_b),
    )
    if dt > bound:
        raise CflViolation(f"dt={dt:g} exceeds the stability bound {bound:g}")
    new_a = _advance_population(state.n_A, model.eps_A, state.ptilde_B, g_a, dt)
    new_b = _advance_population(state.n_B, model.eps_B, state.ptilde_A, g_b, dt)
    if not (np.isfinite(new_a.values).all() and np.isfinite(new_b.values).all()):
        raise NonFiniteState(f"non-finite density at t={state.time + dt:g}")
    return make_state(new_a, new_b, state.time + dt, model)


# ---------------------------------------------------------------------------
# analytic machinery (no advection)


def _require_no_advection(model: CoopModel) -> None:
    if model.eps_A != 0.0 or model.eps_B != 0.0:
        raise RequiresNoAdvection("needs eps_A = eps_B = 0")


_PROBE = np.linspace(0.0, 1.0, 257)


def _constant_coefficient(coeff: Coefficient, name: str) -> float:
    if not callable(coeff):
        return float(coeff)
    sampled = np.asarray(coeff(_PROBE), dtype=float)
    if sampled.ndim == 0:
        return float(sampled)
    if float(np.ptp(sampled)) <= 1e-12 * (1.0 + float(np.abs(sampled).max())):
        return float(sampled[0])
    raise RequiresConstantGain(f"{name} must be constant here")


def _log_weights(n0_values: np.ndarray, r_values: np.ndarray, t: float) -> np.ndarray:
    positive = n0_values > 0.0
    safe = np.where(positive, n0_values, 1.0)
    return np.where(positive, np.log(safe) + r_values * t, -np.inf)


def _mean_from_log_weights(p: np.ndarray, w: np.ndarray) -> float:
    peak = float(w.max())
    if not np.isfinite(peak):
        raise ZeroMass("empty initial support")
    u = np.exp(w - peak)
    return float((p * u).sum() / u.sum())


def analytic_means(model: CoopModel, t: float, n_cells: int = DEFAULT_CELLS) -> tuple[float, float]:
    """Closed-form mean cooperation probabilities at time t (eps = 0).

    The gain factor exp(gamma * integral of E) is p-independent for
    constant coefficients and cancels, so

        ptilde(t) = integral(p n0(p) e^{r(p) t}) / integral(n0(p) e^{r(p) t})

    evaluated by midpoint quadrature in log space (stable for large t).
    """
    _require_no_advection(model)
    for name in ("gamma_A", "gamma_B", "b", "c"):
        _constant_coefficient(getattr(model, name), name)
    p = Grid1(n_cells).centers
    out = []
    for r_fn, n0_fn in ((model.r_A, model.n0_A), (model.r_B, model.n0_B)):
        w = _log_weights(
            np.asarray(n0_fn(p), dtype=float), np.asarray(r_fn(p), dtype=float), t
        )
        out.append(_mean_from_log_weights(p, w))
    return out[0], out[1]


def analytic_solution_no_advection(
    model: CoopModel, t: float, n_cells: int = DEFAULT_CELLS
) -> tuple[DensityField, DensityField, float, float]:
    """Exact advection-free state: densities and means at time t.

    n(t, p) = n0(p) exp(r(p) t + gamma * integral_0^t E ds), with the time
    integral of the gain accumulated by the trapezoid rule on a uniform
    time grid (the means entering E are themselves closed-form).
    """
    _require_no_advection(model)
    gamma_a = _constant_coefficient(model.gamma_A, "gamma_A")
    gamma_b = _constant_coefficient(model.gamma_B, "gamma_B")
    b = _constant_coefficient(model.b, "b")
    c = _constant_coefficient(model.c, "c")
    if t < 0.0:
        raise ValueError("t must be >= 0")
    grid = Grid1(n_cells)
    p = grid.centers
    r_a = np.asarray(model.r_A(p), dtype=float)
    r_b = np.asarray(model.r_B(p), dtype=float)
    n0_a = np.asarray(model.n0_A(p), dtype=float)
    n0_b = np.asarray(model.n0_B(p), dtype=float)

    def mean_at(s: float, n0, r) -> float:
        return _mean_from_log_weights(p, _log_weights(n0, r, s))

    if t == 0.0:
        int_e_a = int_e_b = 0.0
    else:
        times = np.linspace(0.0, t, max(3, int(math.ceil(t / 0.005)) + 1))
        pt_a = np.array([mean_at(s, n0_a, r_a) for s in times])
        pt_b = np.array([mean_at(s, n0_b, r_b) for s in times])
        e_a = b * pt_b - c * pt_a
        e_b = b * pt_a - c * pt_b
        h = np.diff(times)
        int_e_a = float(((e_a[1:] + e_a[:-1]) * h).sum() / 2.0)
        int_e_b = float(((e_b[1:] + e_b[:-1]) * h).sum() / 2.0)
    field_a = DensityField(grid, n0_a * np.exp(r_a * t + gamma_a * int_e_a))
    field_b = DensityField(grid, n0_b * np.exp(r_b * t + gamma_b * int_e_b))
    return field_a, field_b, mean_at(t, n0_a, r_a), mean_at(t, n0_b, r_b)


# ---------------------------------------------------------------------------
# fate classification


@dataclass(frozen=True)
class PopulationFate:
    verdict: str
    fitness: float
    p_star: float
    r_star: float
    delta: float | None = None
    interval: tuple[tuple[float, float], ...] = ()


@dataclass(frozen=True)
class FateReport:
    pop_A: PopulationFate
    pop_B: PopulationFate


def _golden_max(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-12):
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = float(lo), float(hi)
    x1 = b - inv_phi * (b - a)
    x2 = a + inv_phi * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > tol:
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + inv_phi * (b - a)
            f2 = f(x2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - inv_phi * (b - a)
            f1 = f(x1)
    x = 0.5 * (a + b)
    return x, f(x)


def _support_runs(mask: np.ndarray) -> list[tuple[int, int]]:
    runs = []
    i, n = 0, mask.size
    while i < n:
        if not mask[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and mask[j + 1]:
            j += 1
        runs.append((i, j))
        i = j + 1
    return runs


def _support_maximizer(r_fn, n0_fn, p_scan: np.ndarray, uniqueness_tol: float):
    """Locate the unique maximizer of r over the initial support.

    Grid scan, plateau-aware local-maximum census for the uniqueness
    hypothesis, then golden-section refinement inside the bracketing cells.
    """
    n0 = np.asarray(n0_fn(p_scan), dtype=float)
    support = n0 > 0.0
    if not support.any():
        raise ValueError("initial density vanishes on the whole scan grid")
    r = np.asarray(r_fn(p_scan), dtype=float)

    # local maxima within each support run, adjacent equal values grouped;
    # a pair can be a smooth peak straddling a grid midpoint, three or more
    # equal points are treated as a genuine flat top
    candidates = []  # (value, first_idx, last_idx, run)
    for run in _support_runs(support):
        s, e = run
        for i in range(s, e + 1):
            if i > s and r[i] < r[i - 1]:
                continue
            if i < e and r[i] < r[i + 1]:
                continue
            if candidates and candidates[-1][3] == run and candidates[-1][2] == i - 1 \
                    and r[i] == candidates[-1][0]:
                value, first, _, _ = candidates[-1]
                candidates[-1] = (value, first, i, run)
            else:
                candidates.append((r[i], i, i, run))
    candidates.sort(key=lambda c: c[0], reverse=True)
    best = candidates[0]
    if best[2] - best[1] >= 2:
        raise NonUniqueMaximizer("flat top: the maximum is attained on a plateau")
    if len(candidates) > 1 and best[0] - candidates[1][0] <= uniqueness_tol:
        raise NonUniqueMaximizer(
            f"two local maxima within {uniqueness_tol:g} of each other"
        )
    value, first, last, (s, e) = best
    lo = p_scan[max(first - 1, s)]
    hi = p_scan[min(last + 1, e)]
    if hi <= lo:
        return float(p_scan[first]), float(value)
    p_star, r_star = _golden_max(lambda x: float(r_fn(x)), lo, hi)
    if r_star < value:  # refinement never loses against the scan
        p_star, r_star = float(p_scan[first]), float(value)
    return float(p_star), float(r_star)


def _level_set_intervals(r_fn, p_scan: np.ndarray, level: float):
    r = np.asarray(r_fn(p_scan), dtype=float)
    mask = r > level
    intervals = []
    for i, j in _support_runs(mask):
        lo = float(p_scan[i])
        if i > 0:
            lo = float(brentq(lambda x: float(r_fn(x)) - level, p_scan[i - 1], p_scan[i]))
        hi = float(p_scan[j])
        if j + 1 < p_scan.size:
            hi = float(brentq(lambda x: float(r_fn(x)) - level, p_scan[j], p_scan[j + 1]))
        intervals.append((lo, hi))
    return tuple(intervals)


def _population_fate(r_fn, p_star, r_star, fitness, p_scan, crit_tol) -> PopulationFate:
    if abs(fitness) <= crit_tol:
        return PopulationFate(VERDICT_CRITICAL, fitness, p_star, r_star)
    if fitness < 0.0:
        return PopulationFate(VERDICT_EXTINCTION, fitness, p_star, r_star)
    delta = fitness / 2.0
    intervals = _level_set_intervals(r_fn, p_scan, r_star - delta)
    return PopulationFate(VERDICT_BLOW_UP, fitness, p_star, r_star, delta, intervals)


def classify_fate(
    model: CoopModel,
    *,
    scan_points: int = SCAN_POINTS,
    crit_tol: float = CRIT_TOL,
    uniqueness_tol: float = UNIQUENESS_TOL,
) -> FateReport:
    """Predict each population's long-time fate from the model alone.

    Valid for advection-free models with constant gain coefficients.  The
    verdict follows the sign of r(p*) + gamma (b p*_other - c p*_self):
    negative means extinction, positive means pointwise blow-up on the
    level set I = {p : r(p) > r(p*) - fitness/2}, and |fitness| <= crit_tol
    is reported as Critical.  A maximizer that is not numerically unique
    (second local maximum within uniqueness_tol, or a flat top) raises
    NonUniqueMaximizer rather than guessing.
    """
    _require_no_advection(model)
    gamma_a = _constant_coefficient(model.gamma_A, "gamma_A")
    gamma_b = _constant_coefficient(model.gamma_B, "gamma_B")
    b = _constant_coefficient(model.b, "b")
    c = _constant_coefficient(model.c, "c")
    p_scan = np.linspace(0.0, 1.0, scan_points)
    pstar_a, rstar_a = _support_maximizer(model.r_A, model.n0_A, p_scan, uniqueness_tol)
    pstar_b, rstar_b = _support_maximizer(model.r_B, model.n0_B, p_scan, uniqueness_tol)
    fitness_a = rstar_a + gamma_a * (b * pstar_b - c * pstar_a)
    fitness_b = rstar_b + gamma_b * (b * pstar_a - c * pstar_b)
    return FateReport(
        pop_A=_population_fate(model.r_A, pstar_a, rstar_a, fitness_a, p_scan, crit_tol),
        pop_B=_population_fate(model.r_B, pstar_b, rstar_b, fitness_b, p_scan, crit_tol),
    )


# ---------------------------------------------------------------------------
# time integration driver


@dataclass(frozen=True)
class CoopRunResult:
    """Snapshots, per-step scalar series and (when available) fate checks.

    ``series`` columns: t, rho_A, rho_B, ptilde_A, ptilde_B, E_A, E_B.
    ``halted`` is None for a completed run, "BlowUpObserved" when the
    overflow guard stopped it, or "ExtinctPopulation:<label>" when a mass
    underflowed.
    """

    snapshots: tuple[CoopState, ...]
    series: np.ndarray
    fate: FateReport | None
    consistency: dict | None
    halted: str | None


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


def _series_row(state: CoopState) -> tuple:
    return (
        state.time,
        state.rho_A,
        state.rho_B,
        state.ptilde_A,
        state.ptilde_B,
        state.E_A,
        state.E_B,
    )


def _log_slope(times: np.ndarray, masses: np.ndarray) -> float | None:
    keep = masses > 0.0
    if keep.sum() < 2:
        return None
    t, m = times[keep], masses[keep]
    cut = t >= t[0] + 0.75 * (t[-1] - t[0])
    if cut.sum() < 2:
        cut = slice(None)
    return float(np.polyfit(t[cut], np.log(m[cut]), 1)[0])


def _consistency_entry(series, rho_col, pt_col, fate: PopulationFate, cell, halted):
    slope = _log_slope(series[:, 0], series[:, rho_col])
    if fate.verdict == VERDICT_BLOW_UP:
        matches = halted == "BlowUpObserved" or (slope is not None and slope > 0.0)
    elif fate.verdict == VERDICT_EXTINCTION:
        matches = slope is not None and slope < 0.0
    else:
        matches = slope is not None and abs(slope) < 0.05
    pt_limit = float(series[-1, pt_col])
    return {
        "verdict": fate.verdict,
        "fitness": fate.fitness,
        "log_slope": slope,
        "slope_matches": matches,
        "ptilde_limit": pt_limit,
        "ptilde_error": abs(pt_limit - fate.p_star),
        "ptilde_within_cell": abs(pt_limit - fate.p_star) <= cell,
    }


def run(
    model: CoopModel,
    t_end: float,
    snapshot_every: float | None = None,
    n_cells: int = DEFAULT_CELLS,
    dt_max: float | None = None,
) -> CoopRunResult:
    """Integrate the coupled system to t_end.

    dt is 0.9 times the stability bound, capped by dt_max (pass one for
    accuracy when the bound is loose, e.g. pure-growth models) and by the
    remaining time.  Snapshots are the states nearest the multiples of
    snapshot_every, always including t = 0 and the final time.  When the
    model satisfies the analytic preconditions the result carries the
    FateReport plus a record comparing observed log-mass slopes and mean
    limits against it.
    """
    if t_end < 0.0:
        raise ValueError("t_end must be >= 0")
    state = initial_state(model, n_cells)
    targets = _snapshot_times(t_end, snapshot_every)
    snapshots: list[CoopState] = [state]
    next_target = 1
    series_rows = [_series_row(state)]
    halted = None
    time_slack = 1e-12 * max(1.0, t_end)
    while state.time < t_end - time_slack:
        if max(state.rho_A, state.rho_B) > OVERFLOW_GUARD:
            halted = "BlowUpObserved"
            break
        dt = CFL_SAFETY * stable_dt(state, model)
        if dt_max is not None:
            dt = min(dt, dt_max)
        dt = min(dt, t_end - state.time)
        previous = state
        try:
            state = step(state, model, dt)
        except ExtinctPopulation as exc:
            halted = f"ExtinctPopulation:{exc.population}"
            state = previous
            break
        series_rows.append(_series_row(state))
        while next_target < len(targets) and targets[next_target] <= state.time + time_slack:
            near = targets[next_target]
            pick = previous if abs(previous.time - near) < abs(state.time - near) else state
            snapshots.append(pick)
            next_target += 1
    if snapshots[-1] is not state:
        snapshots.append(state)
    series = np.array(series_rows, dtype=float)
    try:
        fate = classify_fate(model)
    except (RequiresNoAdvection, RequiresConstantGain, NonUniqueMaximizer):
        fate = None
    consistency = None
    if fate is not None:
        cell = state.n_A.grid.cell_width
        consistency = {
            "halted": halted,
            "pop_A": _consistency_entry(series, 1, 3, fate.pop_A, cell, halted),
            "pop_B": _consistency_entry(series, 2, 4, fate.pop_B, cell, halted),
        }
    return CoopRunResult(
        snapshots=tuple(snapshots),
        series=series,
        fate=fate,
        consistency=consistency,
        halted=halted,
    )
