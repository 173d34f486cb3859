"""Reactive longitudinal control of the automated vehicle.

Once a cut-in vehicle disturbs the planned trajectory, the vehicle drops to
headway regulation: a PI controller on the time-headway error, an emergency
braking trigger on time-to-collision, and a signal-stop rule.  The planner
is never re-entered mid-corridor; after the disturber departs the vehicle
free-drives at the speed setpoint captured when the plan was abandoned.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Optional

from .car_following import CollisionError
from .core import Phase


class ControlMode(enum.Enum):
    ECO_AD = "eco_ad"
    ACC = "acc"
    AEB = "aeb"
    STOPPED_AT_SIGNAL = "stopped_at_signal"


@dataclass(frozen=True)
class AccState:
    """Headway-tracking PI controller with anti-windup."""

    k_p: float = 0.8
    k_i: float = 0.1
    t_hw: float = 1.5
    integral: float = 0.0
    a_min: float = -2.0
    a_max: float = 1.0
    integral_limit: float = 5.0
    low_speed: float = 0.5
    hold_gap: float = 4.0

    def __post_init__(self):
        if self.k_p < 0 or self.k_i < 0:
            raise ValueError("gains must be nonnegative")
        if self.t_hw <= 0:
            raise ValueError("desired time headway must be positive")
        if abs(self.integral) > self.integral_limit + 1e-12:
            raise ValueError("integral outside anti-windup bounds")


@dataclass(frozen=True)
class ControlParams:
    """Engine-level controller configuration for one automated vehicle."""

    k_p: float = 0.8
    k_i: float = 0.1
    t_hw: float = 1.5
    a_min: float = -2.0
    a_max: float = 1.0
    integral_limit: float = 5.0
    ttc_aeb: float = 1.5
    ttc_release: float = 3.0
    sensing_range: float = 120.0
    speed_gain: float = 0.5        # free-driving speed tracking gain
    track_gain: float = 0.5        # planner feedforward correction gain
    stop_engage_decel: float = 1.0  # start a signal stop once this decel is needed
    green_slack: float = 0.8       # commit to stop unless arrival beats green end by this
    depart_accel: float = 1.2
    depart_speed: float = 12.0
    stop_offset: float = 2.0       # stop-line standoff before the intersection

    def acc_state(self) -> AccState:
        return AccState(
            k_p=self.k_p,
            k_i=self.k_i,
            t_hw=self.t_hw,
            a_min=self.a_min,
            a_max=self.a_max,
            integral_limit=self.integral_limit,
        )


def ttc(r_l: float, r_l_dot: float) -> float:
    """Time-to-collision; infinite for an opening or steady gap."""
    if r_l <= 0:
        raise CollisionError(f"nonpositive range {r_l:.3f} m")
    if r_l_dot >= 0:
        return math.inf
    return -r_l / r_l_dot


def acc_command(state: AccState, r_l: float, v_cav: float, dt: float):
    """One PI update on the headway error; returns (accel command, new state).

    Below the low-speed threshold the time headway is undefined, so the
    controller falls back to a gap-based creep/hold and bleeds its integral.
    """
    if v_cav <= state.low_speed:
        a = 0.5 if r_l > state.hold_gap else state.a_min
        return a, replace(state, integral=0.0)
    e_hw = r_l / v_cav - state.t_hw
    integral = state.integral + e_hw * dt
    integral = min(max(integral, -state.integral_limit), state.integral_limit)
    a = state.k_p * e_hw + state.k_i * integral
    a = min(max(a, state.a_min), state.a_max)
    return a, replace(state, integral=integral)


def speed_track(v: float, v_set: float, gain: float, a_min: float, a_max: float) -> float:
    """Proportional speed holding toward a setpoint."""
    return min(max(gain * (v_set - v), a_min), a_max)


def stop_decel(v: float, dist: float) -> float:
    """Constant deceleration that brings speed to zero at the given distance."""
    return v * v / (2.0 * max(dist, 0.1))


def arbitrate(
    mode: ControlMode,
    v_cav: float,
    leader_gap: Optional[float],
    leader_speed: Optional[float],
    phase: Phase,
    dist_to_stop: float,
    params: ControlParams,
) -> ControlMode:
    """Mode selection for one step.

    Emergency braking preempts everything and latches until standstill or a
    cleared threat.  A sensed leader demands headway regulation.  The planned
    mode survives only as long as it is never left: once in ACC the vehicle
    does not re-enter planning.  At the stop line under red the vehicle holds.
    """
    if mode is ControlMode.STOPPED_AT_SIGNAL:
        return ControlMode.STOPPED_AT_SIGNAL if phase is Phase.RED else ControlMode.ACC

    leader_sensed = (
        leader_gap is not None
        and leader_gap <= params.sensing_range
    )
    ttc_val = math.inf
    if leader_sensed:
        ttc_val = ttc(leader_gap, leader_speed - v_cav)

    if mode is ControlMode.AEB:
        if v_cav <= 1e-6 or ttc_val > params.ttc_release:
            mode = ControlMode.ACC  # threat cleared; fall through
        else:
            return ControlMode.AEB
    if leader_sensed and ttc_val < params.ttc_aeb:
        return ControlMode.AEB

    if phase is Phase.RED and -2.0 <= dist_to_stop <= 0.5 and v_cav <= 0.1:
        return ControlMode.STOPPED_AT_SIGNAL
    if leader_sensed:
        return ControlMode.ACC
    return mode if mode is ControlMode.ECO_AD else ControlMode.ACC
