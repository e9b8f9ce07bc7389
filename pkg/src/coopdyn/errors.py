"""Error types shared across the simulation modules.

Each class marks a distinct failure mode of a model run, so callers (and the
CLI) can report the condition by name instead of pattern-matching messages.
"""
from __future__ import annotations


class CoopdynError(Exception):
    """Base class for all model-level errors in this package."""


class ZeroMass(CoopdynError):
    """A density integrates to (numerically) zero where positive mass is required."""


class EmptySupport(CoopdynError):
    """No grid cell center falls inside the initial bump's support."""


class CflViolation(CoopdynError):
    """Requested time step exceeds the positivity-preserving stability bound."""


class NonFiniteState(CoopdynError):
    """A state update produced NaN or infinity."""


class NotBalanced(CoopdynError):
    """Operation requires the balanced regime (e = eps11*eps21 - eps12*eps22 = 0)."""


class NoRootInRange(CoopdynError):
    """Fixed-point quadratic has no admissible root; indicates inconsistent inputs."""


class TooFewPlayers(CoopdynError):
    """The mean-field game update needs at least two players."""


class NonUniqueMaximizer(CoopdynError):
    """Growth rate attains its maximum at more than one point of the IC support."""


class RequiresNoAdvection(CoopdynError):
    """Analytic machinery is only valid for eps_A = eps_B = 0."""


class RequiresConstantGain(CoopdynError):
    """Fate classification assumes a constant gain sensitivity gamma."""


class ExtinctPopulation(CoopdynError):
    """A population's mass hit zero, so its mean trait is undefined."""

    def __init__(self, population: str, time: float):
        self.population = population
        self.time = time
        super().__init__(f"population {population} extinct at t={time:g}")
