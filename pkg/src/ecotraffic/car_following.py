"""Deterministic car-following law for human vehicles.

The Intelligent Driver Model maps (speed, gap, closing speed) to a
longitudinal acceleration.  It doubles as the mental model for lane-change
counterfactuals: the accelerations every involved vehicle would have before
and after a hypothetical change are IDM evaluations against the current and
prospective neighbors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

FREE_ROAD = math.inf


class CollisionError(RuntimeError):
    """A follower's gap to its leader became nonpositive."""


@dataclass(frozen=True)
class CfParams:
    v0: float = 18.0       # free-flow speed
    T: float = 1.5         # desired time gap
    a_max: float = 1.5     # maximum acceleration
    b_comf: float = 2.0    # comfortable deceleration
    s0: float = 2.0        # jam gap
    delta: float = 4.0     # free-flow acceleration exponent

    def __post_init__(self):
        for name in ("v0", "T", "a_max", "b_comf", "s0"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.delta < 1:
            raise ValueError("delta must be at least 1")


def desired_gap(v: float, dv: float, params: CfParams) -> float:
    """Dynamic desired gap s*(v, dv); dv > 0 means closing on the leader."""
    return params.s0 + max(
        0.0, v * params.T + v * dv / (2.0 * math.sqrt(params.a_max * params.b_comf))
    )


def cf_acceleration(v: float, gap: float, dv: float, params: CfParams) -> float:
    """IDM acceleration; gap = inf encodes a free road.

    A nonpositive gap with a leader present is a collision state and raises,
    so that mis-specified scenarios surface loudly instead of being clamped.
    """
    free = 1.0 - (v / params.v0) ** params.delta
    if gap == FREE_ROAD:
        return params.a_max * free
    if gap <= 0:
        raise CollisionError(f"nonpositive gap {gap:.3f} m at speed {v:.3f} m/s")
    ratio = desired_gap(v, dv, params) / gap
    return params.a_max * (free - ratio * ratio)


def equilibrium_gap(v: float, params: CfParams) -> float:
    """The unique gap with zero acceleration while matching leader speed."""
    if not 0.0 < v < params.v0:
        raise ValueError("equilibrium exists only for 0 < v < v0")
    free = 1.0 - (v / params.v0) ** params.delta
    return desired_gap(v, 0.0, params) / math.sqrt(free)


def _leader_of(vehicles: Sequence, lane: int, s: float) -> Optional[object]:
    best = None
    for veh in vehicles:
        if veh.lane == lane and veh.s > s:
            if best is None or veh.s < best.s:
                best = veh
    return best


def _follower_of(vehicles: Sequence, lane: int, s: float) -> Optional[object]:
    best = None
    for veh in vehicles:
        if veh.lane == lane and veh.s < s:
            if best is None or veh.s > best.s:
                best = veh
    return best


def _accel_toward(follower, leader, cf: CfParams, min_gap: float = 0.1) -> float:
    """IDM response of `follower` to `leader` (free road if leader is None).

    Hypothetical gaps are floored at min_gap so that overlapping candidate
    configurations yield a huge finite deceleration the safety guard vetoes.
    """
    if leader is None:
        return cf_acceleration(follower.v, FREE_ROAD, 0.0, cf)
    gap = max(leader.s - leader.length - follower.s, min_gap)
    return cf_acceleration(follower.v, gap, follower.v - leader.v, cf)


def counterfactual_context(vehicles: Sequence, subject_id: str, target_lane: int):
    """Build the before/after acceleration context for a candidate change.

    ``vehicles`` is any sequence of objects with id, lane, s, v, length and a
    ``cf`` parameter attribute; the scene is only read, never mutated.
    Missing neighbors enter as free road (subject) or as zero follower terms.
    The old follower is assumed unaffected, so its terms are equal.
    """
    from .lane_change import LaneChangeContext  # deferred: import cycle

    subject = next((veh for veh in vehicles if veh.id == subject_id), None)
    if subject is None:
        raise ValueError(f"no vehicle with id {subject_id!r}")
    if abs(target_lane - subject.lane) != 1:
        raise ValueError("target lane must be adjacent")

    cur_leader = _leader_of(vehicles, subject.lane, subject.s)
    new_leader = _leader_of(vehicles, target_lane, subject.s)
    new_follower = _follower_of(vehicles, target_lane, subject.s)
    old_follower = _follower_of(vehicles, subject.lane, subject.s)

    a_c = _accel_toward(subject, cur_leader, subject.cf)
    a_c_new = _accel_toward(subject, new_leader, subject.cf)

    if new_follower is None:
        a_n = a_n_new = 0.0
    else:
        a_n = _accel_toward(new_follower, new_leader, new_follower.cf)
        a_n_new = _accel_toward(new_follower, subject, new_follower.cf)

    if old_follower is None:
        a_o = 0.0
    else:
        a_o = _accel_toward(old_follower, subject, old_follower.cf)

    return LaneChangeContext(
        a_c=a_c, a_c_new=a_c_new, a_n=a_n, a_n_new=a_n_new, a_o=a_o, a_o_new=a_o
    )
