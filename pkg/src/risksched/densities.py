"""Transition kernels of the error/channel chain and their folded versions.

The error moves by delta_next = a*delta + w (no delivery) or delta_next = w
(delivery), w ~ N(0, sigma2), independently of the channel jump.  The folded
chain tracks |delta| only; its kernel is the image measure of the original
one under v -> |v|.

`normalized` selects whether Gaussian factors carry 1/sqrt(2*pi*sigma2).
Unnormalized kernels rescale every Bellman branch by the same constant per
stage, so the induced policy is unchanged; normalized is the default so that
values keep probability semantics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ModelParams

__all__ = [
    "ChannelMatrix",
    "psi",
    "varphi",
    "gauss",
    "trans_density",
    "folded_density",
]


@dataclass(frozen=True)
class ChannelMatrix:
    """Row-stochastic 2x2 channel transition matrix p[c][c_next]."""

    p: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.p, dtype=float)
        if p.shape != (2, 2):
            raise ValueError(f"channel matrix must be 2x2, got shape {p.shape}")
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("channel probabilities must lie in [0, 1]")
        if not np.allclose(p.sum(axis=1), 1.0, rtol=0, atol=1e-12):
            raise ValueError("channel matrix rows must sum to 1")
        object.__setattr__(self, "p", p)

    @classmethod
    def from_params(cls, params: ModelParams) -> "ChannelMatrix":
        return cls(params.channel_matrix())

    def __getitem__(self, idx):
        return self.p[idx]


def psi(v, sigma2: float):
    """Unnormalized Gaussian kernel exp(-v**2 / (2*sigma2))."""
    if not sigma2 > 0:
        raise ValueError("sigma2 must be > 0")
    return np.exp(-np.square(v) / (2.0 * sigma2))


def varphi(v, s, sigma2: float):
    """Folded kernel psi(v - s) + psi(v + s)."""
    return psi(np.asarray(v) - s, sigma2) + psi(np.asarray(v) + s, sigma2)


def gauss(x, mean, sigma2: float, normalized: bool = True):
    """Gaussian kernel at x with the given mean; density iff normalized."""
    val = psi(np.asarray(x) - mean, sigma2)
    if normalized:
        val = val / np.sqrt(2.0 * np.pi * sigma2)
    return val


def trans_density(
    delta_next,
    c_next: int,
    delta,
    c: int,
    u: int,
    params: ModelParams,
    normalized: bool = True,
):
    """Joint kernel p(delta_next, c_next | delta, c, u).

    Idle (u=0) keeps the drift kernel centered at a*delta.  A transmission
    resets the center to 0 only when the channel is good (c=1); in a bad
    channel the attempt is lost and the drift kernel applies unchanged.
    """
    if c not in (0, 1) or c_next not in (0, 1) or u not in (0, 1):
        raise ValueError("c, c_next, u must be 0 or 1")
    p_ch = params.channel_matrix()[c, c_next]
    center = 0.0 if (u * c == 1) else params.a * np.asarray(delta)
    return p_ch * gauss(delta_next, center, params.sigma2, normalized=normalized)


def folded_density(
    delta_next,
    c_next: int,
    delta,
    c: int,
    u: int,
    params: ModelParams,
    normalized: bool = True,
):
    """Kernel of the |delta| chain on [0, inf): the two-sided image sum."""
    dn = np.asarray(delta_next, dtype=float)
    d = np.asarray(delta, dtype=float)
    if np.any(dn < 0) or np.any(d < 0):
        raise ValueError("folded kernel arguments must be non-negative")
    return trans_density(
        dn, c_next, d, c, u, params, normalized=normalized
    ) + trans_density(-dn, c_next, d, c, u, params, normalized=normalized)
