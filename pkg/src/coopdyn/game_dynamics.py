"""Two-player reciprocity game and its n-player mean-field variant.

Each turn, a player cooperates with some probability; afterwards it raises
its probability if the opponent cooperated and lowers it otherwise, with
per-player reciprocity coefficients eps. By the law of total probability the
expected update is the deterministic map

    p' = f1(p, q) = q * (p + eps11*(1-p)) + (1-q) * p * (1-eps12)
    q' = f2(p, q) = p * (q + eps21*(1-q)) + (1-p) * q * (1-eps22)

The product e = eps11*eps21 - eps12*eps22 splits the dynamics into three
regimes: e < 0 drives every interior start to mutual defection (0,0), e > 0
to mutual cooperation (1,1), and e = 0 ("balanced") conserves
eps22*p + eps11*q, selecting an interior fixed point on the curve
q = eps12*p / (eps11 + (eps12-eps11)*p). Closed-form eigenvalues for all
three cases are provided and are cross-checked against finite-difference
Jacobians in the tests.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NoRootInRange, NotBalanced, TooFewPlayers

BALANCE_TOL = 1e-12

REGIME_COLLAPSE = "CollapseStable"
REGIME_FULL_COOP = "FullCoopStable"
REGIME_BALANCED = "Balanced"


@dataclass(frozen=True)
class GameParams:
    """Payoff (b, c) and the four reciprocity coefficients.

    eps11: A's gain in cooperation probability after B cooperates.
    eps12: A's loss after B defects. eps21/eps22: same for B observing A.
    """

    eps11: float
    eps12: float
    eps21: float
    eps22: float
    b: float = 2.0
    c: float = 1.0

    def __post_init__(self) -> None:
        if not self.b > self.c > 0.0:
            raise ValueError(f"need b > c > 0, got b={self.b}, c={self.c}")
        for name in ("eps11", "eps12", "eps21", "eps22"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"need 0 < {name} < 1, got {v}")

    @property
    def discriminant(self) -> float:
        """e = eps11*eps21 - eps12*eps22; its sign selects the regime."""
        return self.eps11 * self.eps21 - self.eps12 * self.eps22


@dataclass(frozen=True)
class GameState:
    p: float
    q: float
    k: int = 0


@dataclass(frozen=True)
class FixedPointReport:
    point: tuple[float, float]
    eigenvalues: tuple[float, float]
    stable: bool


@dataclass(frozen=True)
class RegimeReport:
    e: float
    regime: str
    fixed_points: tuple[FixedPointReport, ...]


def _advance(p, q, eps_up, eps_down):
    """Expected next cooperation probability of the player currently at p.

    Convex combination over the opponent's move (probability q of
    cooperating), so the result stays in [0,1]; clipped only to absorb
    rounding at the endpoints.
    """
    raised = p + eps_up * (1.0 - p)
    lowered = p * (1.0 - eps_down)
    return np.clip(q * raised + (1.0 - q) * lowered, 0.0, 1.0)


def step(state: GameState, params: GameParams) -> GameState:
    """One synchronous turn of the expected-update map."""
    p = float(_advance(state.p, state.q, params.eps11, params.eps12))
    q = float(_advance(state.q, state.p, params.eps21, params.eps22))
    return GameState(p, q, state.k + 1)


def step_batch(
    p: np.ndarray, q: np.ndarray, params: GameParams
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`step` over arrays of states (same arithmetic)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return (
        _advance(p, q, params.eps11, params.eps12),
        _advance(q, p, params.eps21, params.eps22),
    )


def expected_gains(state: GameState, params: GameParams) -> tuple[float, float, float]:
    """Per-turn expected gains (E_A, E_B, E_avg) under payoff b (benefit), c (cost)."""
    e_a = params.b * state.q - params.c * state.p
    e_b = params.b * state.p - params.c * state.q
    e_avg = (params.b - params.c) * (state.p + state.q) / 2.0
    return e_a, e_b, e_avg


def endpoint_eigenvalues(params: GameParams) -> tuple[tuple[float, float], tuple[float, float]]:
    """Jacobian eigenvalues at (0,0) and at (1,1), in that order.

    Both discriminants are nonnegative for admissible eps: they are bounded
    below by (eps12-eps22)^2 and (eps11-eps21)^2 respectively.
    """
    e = params.discriminant
    s0 = params.eps12 + params.eps22
    d0 = math.sqrt(max(s0 * s0 + 4.0 * e, 0.0))
    s1 = params.eps11 + params.eps21
    d1 = math.sqrt(max(s1 * s1 - 4.0 * e, 0.0))
    lam0 = ((2.0 - s0 - d0) / 2.0, (2.0 - s0 + d0) / 2.0)
    lam1 = ((2.0 - s1 - d1) / 2.0, (2.0 - s1 + d1) / 2.0)
    return lam0, lam1


def classify(params: GameParams, balance_tol: float = BALANCE_TOL) -> RegimeReport:
    """Regime label plus endpoint fixed points with stability.

    For |e| <= balance_tol the interior fixed point depends on the starting
    state and is left to :func:`balanced_fixed_point`.
    """
    e = params.discriminant
    if abs(e) <= balance_tol:
        return RegimeReport(e, REGIME_BALANCED, ())
    lam0, lam1 = endpoint_eigenvalues(params)
    points = (
        FixedPointReport((0.0, 0.0), lam0, max(abs(lam0[0]), abs(lam0[1])) < 1.0),
        FixedPointReport((1.0, 1.0), lam1, max(abs(lam1[0]), abs(lam1[1])) < 1.0),
    )
    regime = REGIME_COLLAPSE if e < 0.0 else REGIME_FULL_COOP
    return RegimeReport(e, regime, points)


def conserved_quantity(p: float, q: float, params: GameParams) -> float:
    """eps22*p + eps11*q, invariant along balanced trajectories."""
    return params.eps22 * p + params.eps11 * q


def fixed_point_curve(p, params: GameParams):
    """The balanced fixed-point locus q(p) = eps12*p / (eps11 + (eps12-eps11)*p)."""
    p = np.asarray(p, dtype=float)
    out = params.eps12 * p / (params.eps11 + (params.eps12 - params.eps11) * p)
    return float(out) if out.ndim == 0 else out


def balanced_fixed_point(
    p0: float, q0: float, params: GameParams, balance_tol: float = BALANCE_TOL
) -> tuple[float, float]:
    """Limit point of the balanced dynamics started from (p0, q0).

    Eliminating q via the fixed-point curve from the conserved value
    r0 = eps22*p0 + eps11*q0 reduces the 2D system to the scalar quadratic

        (eps22 - eps21)*p^2 + ((eps12-eps11)*r0/eps11 - eps12 - eps22)*p + r0 = 0,

    which has exactly one root with both p and q(p) in [0,1] (the curve rises
    from (0,0) to (1,1) while the conservation line falls).

    Raises
    ------
    NotBalanced
        If |e| exceeds ``balance_tol``.
    NoRootInRange
        If no admissible root exists; cannot happen for valid inputs.
    """
    e = params.discriminant
    if abs(e) > balance_tol:
        raise NotBalanced(f"|e|={abs(e):.3e} exceeds tolerance {balance_tol:.3e}")
    if not (0.0 <= p0 <= 1.0 and 0.0 <= q0 <= 1.0):
        raise ValueError(f"start ({p0}, {q0}) outside [0,1]^2")
    if p0 == 0.0 and q0 == 0.0:
        return 0.0, 0.0
    if p0 == 1.0 and q0 == 1.0:
        return 1.0, 1.0

    r0 = conserved_quantity(p0, q0, params)
    a = params.eps22 - params.eps21
    b = (params.eps12 - params.eps11) * r0 / params.eps11 - (params.eps12 + params.eps22)
    c = r0

    if abs(a) < 1e-14:
        if b == 0.0:
            raise NoRootInRange("degenerate linear fixed-point equation")
        roots = [-c / b]
    else:
        disc = b * b - 4.0 * a * c
        if disc < 0.0:
            if disc > -1e-12 * max(b * b, abs(4.0 * a * c)):
                disc = 0.0
            else:
                raise NoRootInRange(f"negative discriminant {disc:.3e}")
        sq = math.sqrt(disc)
        t = -0.5 * (b + math.copysign(sq, b))
        roots = [t / a]
        if t != 0.0:
            roots.append(c / t)

    slack = 1e-9
    best = None
    for p_star in roots:
        if not -slack <= p_star <= 1.0 + slack:
            continue
        p_star = min(max(p_star, 0.0), 1.0)
        q_star = fixed_point_curve(p_star, params)
        if not -slack <= q_star <= 1.0 + slack:
            continue
        q_star = min(max(q_star, 0.0), 1.0)
        residual = abs(conserved_quantity(p_star, q_star, params) - r0)
        if residual > 1e-8 * (1.0 + abs(r0)):
            continue
        if best is None or residual < best[2]:
            best = (p_star, q_star, residual)
    if best is None:
        raise NoRootInRange(f"no admissible root among {roots}")
    return best[0], best[1]


def interior_eigenvalues(
    p_star: float, q_star: float, params: GameParams
) -> tuple[float, float]:
    """Jacobian eigenvalues at an interior balanced fixed point.

    The Jacobian there has eigenvalues 1 (along the fixed-point curve) and
    1 - (eps11*q/p + eps21*p/q); the second controls stability.
    """
    if not (p_star > 0.0 and q_star > 0.0):
        raise ValueError("interior fixed point required (p, q > 0)")
    g = params.eps11 * q_star / p_star + params.eps21 * p_star / q_star
    return 1.0 - g, 1.0


def gain_increase_predicate(
    p0: float, q0: float, params: GameParams, balance_tol: float = BALANCE_TOL
) -> bool:
    """Whether the average expected gain rises from (p0, q0) to the balanced limit.

    Along the conserved line eps22*p + eps11*q = r0, the limit has a larger p
    than the start exactly when the start lies above the fixed-point curve,
    and E_avg changes by (b-c)/2 * (p*-p0) * (1 - eps22/eps11). Hence the gain
    increases iff (eps11 > eps22 and q0 above the curve) or (eps11 < eps22 and
    q0 below it); with eps11 = eps22 the sum p+q is itself conserved and E_avg
    stays constant.
    """
    e = params.discriminant
    if abs(e) > balance_tol:
        raise NotBalanced(f"|e|={abs(e):.3e} exceeds tolerance {balance_tol:.3e}")
    on_curve = fixed_point_curve(p0, params)
    if params.eps11 > params.eps22:
        return q0 > on_curve
    if params.eps11 < params.eps22:
        return q0 < on_curve
    return False


def n_player_step(probs: np.ndarray, eps_pairs: np.ndarray) -> np.ndarray:
    """Synchronous mean-field turn: each player reacts to the others' mean p.

    ``eps_pairs[i] = (eps_i1, eps_i2)`` are player i's raise/lower
    coefficients. With n = 2 this reduces exactly to :func:`step`.
    """
    probs = np.asarray(probs, dtype=float)
    n = probs.size
    if n < 2:
        raise TooFewPlayers(f"need at least 2 players, got {n}")
    eps_pairs = np.asarray(eps_pairs, dtype=float).reshape(n, 2)
    if n == 2:
        # (sum - p)/1 would reintroduce rounding; keep the 2-player reduction exact
        q = probs[::-1]
    else:
        q = (probs.sum() - probs) / (n - 1)
    return _advance(probs, q, eps_pairs[:, 0], eps_pairs[:, 1])


@dataclass(frozen=True)
class IterationResult:
    final: GameState
    converged: bool
    n_steps: int
    trajectory: np.ndarray | None  # (n_steps+1, 2) rows of (p, q), or None


def iterate(
    state: GameState,
    params: GameParams,
    k_max: int,
    convergence_tol: float = 1e-9,
    record: bool = True,
) -> IterationResult:
    """Run :func:`step` until the move size drops below ``convergence_tol``.

    Non-convergence within ``k_max`` steps is reported in the result, not
    raised. The recorded trajectory includes the starting state.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    p, q = float(state.p), float(state.q)
    path = [(p, q)] if record else None
    converged = False
    k = 0
    e11, e12, e21, e22 = params.eps11, params.eps12, params.eps21, params.eps22
    for k in range(1, k_max + 1):
        p_new = min(max(q * (p + e11 * (1.0 - p)) + (1.0 - q) * (p * (1.0 - e12)), 0.0), 1.0)
        q_new = min(max(p * (q + e21 * (1.0 - q)) + (1.0 - p) * (q * (1.0 - e22)), 0.0), 1.0)
        delta = max(abs(p_new - p), abs(q_new - q))
        p, q = p_new, q_new
        if record:
            path.append((p, q))
        if delta < convergence_tol:
            converged = True
            break
    trajectory = np.asarray(path) if record else None
    return IterationResult(GameState(p, q, state.k + k), converged, k, trajectory)


@dataclass(frozen=True)
class NPlayerResult:
    final: np.ndarray
    converged: bool
    n_steps: int
    trajectory: np.ndarray | None  # (n_steps+1, n) rows of p vectors


def iterate_n(
    probs: np.ndarray,
    eps_pairs: np.ndarray,
    k_max: int,
    convergence_tol: float = 1e-9,
    record: bool = True,
) -> NPlayerResult:
    """n-player analogue of :func:`iterate`."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    p = np.asarray(probs, dtype=float).copy()
    path = [p.copy()] if record else None
    converged = False
    k = 0
    for k in range(1, k_max + 1):
        p_new = n_player_step(p, eps_pairs)
        delta = float(np.abs(p_new - p).max())
        p = p_new
        if record:
            path.append(p.copy())
        if delta < convergence_tol:
            converged = True
            break
    trajectory = np.asarray(path) if record else None
    return NPlayerResult(p, converged, k, trajectory)
