"""Joint ridge estimator over arm-level and key-term-level observations.

A single covariance matrix M and regressand vector b accumulate rank-1
updates from both feedback levels; the preference estimate is theta = M^-1 b.
The inverse is maintained incrementally by the Sherman-Morrison identity and
periodically recomputed by direct factorization to guard against drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels

#: incremental-inverse refresh cadence (updates between direct reinversions)
REFRESH_EVERY = 1000
#: max-abs drift tolerated between the incremental and direct inverse
DRIFT_TOL = 1e-6


@dataclass(frozen=True)
class ConfidenceParams:
    """Parameters of the exploration coefficient: failure probability delta,
    ridge coefficient beta, and feature dimension d."""

    d: int
    delta: float = 0.05
    beta: float = 1.0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.beta <= 0.0:
            raise ValueError(f"beta must be positive, got {self.beta}")


def exploration_coefficient(t: int, budget: float, params: ConfidenceParams) -> float:
    """Width multiplier for confidence radii at round t.

    ``budget`` is the value of the cumulative conversation budget function at
    t (0 for policies that never converse). Non-decreasing in both t and
    budget.
    """
    if t < 0 or budget < 0:
        raise ValueError("round index and budget must be non-negative")
    if not 0.0 < params.delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {params.delta}")
    d, beta = params.d, params.beta
    return math.sqrt(
        2.0 * math.log(1.0 / params.delta)
        + d * math.log(1.0 + (t + budget) / (beta * d))
    ) + math.sqrt(beta)


class EstimatorState:
    """Incremental ridge state: M = beta*I + sum of outer products, b the
    reward-weighted feature sum, with a cached inverse of M.

    Updates are tagged arm- or key-term-level purely for bookkeeping; the
    arithmetic treats both identically. Single-writer: never share a state
    between concurrent workers.
    """

    __slots__ = ("d", "beta", "M", "Minv", "b", "num_arm_obs", "num_key_obs",
                 "_since_refresh")

    def __init__(self, d: int, beta: float = 1.0):
        if d < 1:
            raise ValueError("dimension must be >= 1")
        if beta <= 0.0:
            raise ValueError(f"ridge coefficient must be positive, got {beta}")
        self.d = d
        self.beta = float(beta)
        self.M = np.eye(d) * beta
        self.Minv = np.eye(d) / beta
        self.b = np.zeros(d)
        self.num_arm_obs = 0
        self.num_key_obs = 0
        self._since_refresh = 0

    def update(self, x: np.ndarray, r: float, level: str = "arm") -> "EstimatorState":
        """Absorb one observation: M += x x^T, b += r*x, inverse via the
        rank-1 identity. ``level`` must be "arm" or "key"."""
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.shape != (self.d,):
            raise ValueError(f"feature has shape {x.shape}, expected ({self.d},)")
        if not np.all(np.isfinite(x)) or not math.isfinite(r):
            raise ValueError("non-finite observation")
        _kernels.sm_update(self.M, self.Minv, self.b, x, float(r))
        if level == "arm":
            self.num_arm_obs += 1
        elif level == "key":
            self.num_key_obs += 1
        else:
            raise ValueError(f"unknown observation level {level!r}")
        self._since_refresh += 1
        if self._since_refresh >= REFRESH_EVERY:
            self._refresh_inverse()
        return self

    def _refresh_inverse(self):
        fresh = np.linalg.inv(self.M)
        drift = float(np.max(np.abs(fresh - self.Minv)))
        if drift > DRIFT_TOL:
            raise ArithmeticError(
                f"incremental inverse drifted by {drift:.3e} after "
                f"{self.num_arm_obs + self.num_key_obs} updates"
            )
        self.Minv = fresh
        self._since_refresh = 0

    def theta(self) -> np.ndarray:
        """Current ridge estimate M^-1 b."""
        return self.Minv @ self.b

    def conf_radius(self, x: np.ndarray, alpha: float) -> float:
        """Confidence radius alpha * sqrt(x^T M^-1 x) along direction x."""
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.shape != (self.d,):
            raise ValueError(f"feature has shape {x.shape}, expected ({self.d},)")
        return alpha * math.sqrt(max(_kernels.quad_form(self.Minv, x), 0.0))

    def copy(self) -> "EstimatorState":
        dup = EstimatorState(self.d, self.beta)
        dup.M = self.M.copy()
        dup.Minv = self.Minv.copy()
        dup.b = self.b.copy()
        dup.num_arm_obs = self.num_arm_obs
        dup.num_key_obs = self.num_key_obs
        dup._since_refresh = self._since_refresh
        return dup

    def to_dict(self) -> dict:
        """JSON-serializable snapshot (for checkpointing long runs)."""
        return {
            "d": self.d,
            "beta": self.beta,
            "M": self.M.tolist(),
            "b": self.b.tolist(),
            "num_arm_obs": self.num_arm_obs,
            "num_key_obs": self.num_key_obs,
        }

    @classmethod
    def from_dict(cls, snap: dict) -> "EstimatorState":
        state = cls(int(snap["d"]), float(snap["beta"]))
        state.M = np.asarray(snap["M"], dtype=np.float64)
        if state.M.shape != (state.d, state.d):
            raise ValueError("snapshot M has wrong shape")
        state.Minv = np.linalg.inv(state.M)
        state.b = np.asarray(snap["b"], dtype=np.float64)
        state.num_arm_obs = int(snap["num_arm_obs"])
        state.num_key_obs = int(snap["num_key_obs"])
        return state
