"""Closed-loop dynamics and stage costs of the remote-estimation system.

A scalar source x(t+1) = a*x(t) + w(t) is watched by a sensor that may pay
lambda per attempt to push its measurement through a two-state Markov
(Gilbert-Elliott) channel: state 1 delivers, state 0 drops.  The remote
estimator keeps x_hat; the scheduling-relevant state is the innovation-style
error delta = x - a*x_hat_prev together with the channel state c.

Everything here is a pure function; all randomness lives in callers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ModelParams",
    "SystemState",
    "MdpState",
    "SimTrace",
    "step_source",
    "step_channel",
    "update_estimate",
    "step_error",
    "stage_cost",
    "stage_cost_raw",
]


@dataclass(frozen=True)
class ModelParams:
    """Problem constants.

    a        source gain (any real)
    sigma2   process-noise variance, > 0
    lam      per-transmission energy price, > 0
    gamma    risk-sensitivity parameter, > 0
    horizon  number of costed stages T, >= 0 (decisions at wall stages 0..T-1)
    p01      P(channel good next | bad now)
    p10      P(channel bad next | good now)
    """

    a: float
    sigma2: float
    lam: float
    gamma: float
    horizon: int
    p01: float
    p10: float

    def __post_init__(self) -> None:
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be > 0, got {self.sigma2}")
        if not self.lam > 0:
            raise ValueError(f"lambda must be > 0, got {self.lam}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if self.horizon < 0 or int(self.horizon) != self.horizon:
            raise ValueError(f"horizon must be an integer >= 0, got {self.horizon}")
        for name in ("p01", "p10"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")

    @property
    def sigma(self) -> float:
        return float(np.sqrt(self.sigma2))

    def channel_matrix(self) -> np.ndarray:
        """Row-stochastic 2x2 matrix P[c][c_next]."""
        return np.array(
            [[1.0 - self.p01, self.p01], [self.p10, 1.0 - self.p10]], dtype=float
        )

    def stationary_good_prob(self) -> float:
        """Long-run fraction of time the channel spends in state 1.

        For the degenerate frozen chain (p01 = p10 = 0) there is no unique
        stationary law; 1/2 is returned as the documented convention.
        """
        s = self.p01 + self.p10
        if s == 0.0:
            return 0.5
        return self.p01 / s


@dataclass
class SystemState:
    """Physical-layer state: source, previous estimate, channel."""

    x: float
    x_hat_prev: float
    c: int


@dataclass
class MdpState:
    """Scheduling state: error delta = x - a*x_hat_prev and channel c."""

    delta: float
    c: int


@dataclass
class SimTrace:
    """One closed-loop rollout; row t covers wall stage t = 0..T-1.

    stage_cost[t] == d(delta[t], c[t], u[t]) by construction, and delta
    follows the error recursion for the realized noises.
    """

    t: np.ndarray
    x: np.ndarray
    x_hat: np.ndarray
    delta: np.ndarray
    c: np.ndarray
    u: np.ndarray
    stage_cost: np.ndarray
    seed: int

    def total_cost(self) -> float:
        return float(np.sum(self.stage_cost))


def step_source(x, w, params: ModelParams):
    """x(t+1) = a*x(t) + w(t)."""
    return params.a * x + w


def step_channel(c, uniform_draw, params: ModelParams):
    """Advance the two-state channel using one uniform draw in [0, 1).

    From c=0 the chain moves to 1 iff draw < p01; from c=1 it moves to 0 iff
    draw < p10.
    """
    draw = np.asarray(uniform_draw)
    if np.any(draw < 0.0) or np.any(draw >= 1.0):
        raise ValueError("uniform_draw must lie in [0, 1)")
    c = np.asarray(c)
    next_from_bad = np.where(draw < params.p01, 1, 0)
    next_from_good = np.where(draw < params.p10, 0, 1)
    out = np.where(c == 1, next_from_good, next_from_bad)
    return out if out.ndim else int(out)


def update_estimate(x_hat_prev, x, u, c, params: ModelParams):
    """x_hat(t) = x(t) on delivery (u*c = 1), else a*x_hat(t-1)."""
    uc = np.asarray(u) * np.asarray(c)
    return np.where(uc == 1, x, params.a * np.asarray(x_hat_prev))


def step_error(delta, w, u, c, params: ModelParams):
    """delta(t+1) = w(t) on delivery, else a*delta(t) + w(t)."""
    uc = np.asarray(u) * np.asarray(c)
    return np.where(uc == 1, 0.0, params.a * np.asarray(delta)) + w


def stage_cost(delta, c, u, params: ModelParams):
    """d(delta, c, u) = lambda*u + (1 - u*c)*delta**2."""
    u = np.asarray(u)
    uc = u * np.asarray(c)
    return params.lam * u + (1 - uc) * np.square(delta)


def stage_cost_raw(x, x_hat, u, params: ModelParams):
    """g(x, x_hat, u) = lambda*u + (x - x_hat)**2.

    Along any closed-loop trajectory this coincides pathwise with
    stage_cost evaluated at (delta, c, u).
    """
    return params.lam * np.asarray(u) + np.square(np.asarray(x) - np.asarray(x_hat))
