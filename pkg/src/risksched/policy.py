"""Threshold extraction and runtime decision rules.

The solved transmit sets are up-sets in |delta| (bad-channel sets are
empty), so a policy collapses to one threshold per (stages-to-go, channel):
transmit iff |delta| >= threshold.  Everything here is indexed by stages to
go j = 0..T; j = 0 has no decision and carries threshold +inf.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .solver import GridSpec, PolicyTable

__all__ = [
    "NonThresholdPolicyError",
    "ThresholdSchedule",
    "extract_thresholds",
    "unfold_policy",
    "decide",
    "threshold_policy",
    "idle_policy",
    "always_transmit_policy",
]


class NonThresholdPolicyError(ValueError):
    """A transmit set failed to be an up-set in |delta|.

    This signals a solver bug or a tolerance breach, not a property of the
    problem; the offending (stages_to_go, c, node index) is attached.
    """

    def __init__(self, stages_to_go: int, c: int, node: int, message: str | None = None):
        self.stages_to_go = stages_to_go
        self.c = c
        self.node = node
        super().__init__(
            message
            or f"transmit set is not an up-set at stages_to_go={stages_to_go}, "
            f"c={c}, node={node}"
        )


@dataclass(frozen=True)
class ThresholdSchedule:
    """threshold[j][c]: transmit at j stages to go iff |delta| >= threshold.

    +inf means never transmit; column c=0 is +inf throughout.  Row j=0 is
    the degenerate no-decision row (+inf).
    """

    threshold: np.ndarray

    def __post_init__(self) -> None:
        thr = np.asarray(self.threshold, dtype=float)
        if thr.ndim != 2 or thr.shape[1] != 2:
            raise ValueError(f"threshold must have shape (T+1, 2), got {thr.shape}")
        if np.any(thr < 0):
            raise ValueError("thresholds must be non-negative (or +inf)")
        object.__setattr__(self, "threshold", thr)

    @property
    def horizon(self) -> int:
        return self.threshold.shape[0] - 1

    def at_stages_to_go(self, j: int, c: int) -> float:
        return float(self.threshold[j, c])

    def at_wall_stage(self, s: int, c: int) -> float:
        return float(self.threshold[self.horizon - s, c])


def _folded_actions(policy: PolicyTable, grid: GridSpec) -> np.ndarray:
    """u_star over the non-negative nodes; projects original-space tables."""
    if policy.space == "folded":
        return policy.u_star
    mid = grid.n_points // 2
    right = policy.u_star[:, :, mid:]
    left = policy.u_star[:, :, mid::-1]
    if not np.array_equal(right, left):
        j, c, k = np.argwhere(right != left)[0]
        raise NonThresholdPolicyError(
            int(j), int(c), int(k), "original-space policy is not even; cannot project to |delta|"
        )
    return right


def extract_thresholds(policy: PolicyTable, grid: GridSpec) -> ThresholdSchedule:
    """Smallest node with u_star = 1 per (stages-to-go, c); +inf when none.

    Raises NonThresholdPolicyError if any transmit set is not an up-set.
    """
    actions = _folded_actions(policy, grid)
    pos = grid.folded_nodes()
    T = policy.horizon
    thr = np.full((T + 1, 2), np.inf)
    for j in range(T + 1):
        for c in (0, 1):
            row = actions[j, c]
            ones = np.flatnonzero(row)
            if len(ones) == 0:
                continue
            first = ones[0]
            gaps = np.flatnonzero(row[first:] == 0)
            if len(gaps):
                raise NonThresholdPolicyError(j, c, int(first + gaps[0]))
            thr[j, c] = pos[first]
    return ThresholdSchedule(threshold=thr)


def decide(schedule: ThresholdSchedule, delta, c, t):
    """Action of the schedule with t stages to go: 1 iff |delta| >= threshold."""
    if not 0 <= t <= schedule.horizon:
        raise ValueError(f"t must lie in [0, {schedule.horizon}], got {t}")
    thr = schedule.threshold[t, np.asarray(c)]
    out = (np.abs(delta) >= thr).astype(np.int8)
    return out if out.ndim else int(out)


def unfold_policy(folded: PolicyTable):
    """Decision function (delta, c, stages_to_go) from a folded policy table.

    Looks up the folded node nearest below |delta| and clamps beyond
    delta_max; even in delta by construction, and exact wherever the
    transmit sets are up-sets.
    """
    if folded.space != "folded":
        raise ValueError("unfold_policy expects a folded-space PolicyTable")
    pos = folded.grid.folded_nodes()
    u_star = folded.u_star

    def rule(delta, c, t: int):
        if not 0 <= t <= folded.horizon:
            raise ValueError(f"t must lie in [0, {folded.horizon}], got {t}")
        idx = np.clip(np.searchsorted(pos, np.abs(delta), side="right") - 1, 0, len(pos) - 1)
        out = u_star[t, np.asarray(c), idx].astype(np.int8)
        return out if out.ndim else int(out)

    return rule


def threshold_policy(schedule: ThresholdSchedule):
    """Wrap a schedule as a vectorized decision function (delta, c, t)."""

    def rule(delta, c, t: int):
        return decide(schedule, delta, c, t)

    return rule


def idle_policy():
    def rule(delta, c, t: int):
        out = np.zeros(np.broadcast(np.asarray(delta), np.asarray(c)).shape, dtype=np.int8)
        return out if out.ndim else 0

    return rule


def always_transmit_policy():
    def rule(delta, c, t: int):
        out = np.ones(np.broadcast(np.asarray(delta), np.asarray(c)).shape, dtype=np.int8)
        return out if out.ndim else 1

    return rule
