"""Shared world-state types: vehicles, the two-lane corridor, and signal timing.

Conventions used throughout the package (all SI units):

* lane 0 is the original (right) lane, lane 1 the passing (left) lane
* ``s`` is the front-bumper position along the corridor, increasing toward
  intersection B; intersection A sits at s = 0
* the bumper-to-bumper gap between a follower and its leader is
  ``s_leader - leader.length - s_follower``
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field


class Phase(enum.Enum):
    GREEN = "green"
    RED = "red"


@dataclass(frozen=True)
class VehicleState:
    """Kinematic snapshot of one vehicle."""

    id: str
    lane: int
    s: float
    v: float
    a: float = 0.0
    length: float = 5.0

    def __post_init__(self):
        if self.lane not in (0, 1):
            raise ValueError(f"lane must be 0 or 1, got {self.lane}")
        if self.v < 0:
            raise ValueError(f"speed must be nonnegative, got {self.v}")
        if self.length <= 0:
            raise ValueError("vehicle length must be positive")


@dataclass(frozen=True)
class SignalSchedule:
    """Fixed-time signal shared by both intersections of the corridor.

    ``offset`` is the elapsed time within the cycle at t = 0, so with
    offset = 0 a green phase starts exactly when the simulation starts.
    Phase intervals are half-open: the instant a green ends belongs to red.
    """

    green: float
    red: float
    offset: float = 0.0
    s_b: float = 600.0

    def __post_init__(self):
        if self.green <= 0 or self.red <= 0:
            raise ValueError("green and red durations must be positive")
        if self.s_b <= 0:
            raise ValueError("intersection B must lie downstream of A")

    @property
    def cycle(self) -> float:
        return self.green + self.red

    @property
    def s_a(self) -> float:
        return 0.0


def signal_phase(schedule: SignalSchedule, t: float) -> Phase:
    """Phase at time t >= 0; periodic with the cycle length."""
    if t < 0:
        raise ValueError("time must be nonnegative")
    x = math.fmod(schedule.offset + t, schedule.cycle)
    return Phase.GREEN if x < schedule.green else Phase.RED


def next_switch(schedule: SignalSchedule, t: float) -> float:
    """Time of the next phase boundary strictly after t."""
    x = math.fmod(schedule.offset + t, schedule.cycle)
    if x < schedule.green:
        return t + (schedule.green - x)
    return t + (schedule.cycle - x)


def green_end(schedule: SignalSchedule, t: float) -> float:
    """End of the green window containing t (requires green at t)."""
    if signal_phase(schedule, t) is not Phase.GREEN:
        raise ValueError(f"no green phase at t={t}")
    return next_switch(schedule, t)


def next_green_start(schedule: SignalSchedule, t: float) -> float:
    """Onset of the next green window at or after t (t itself if green)."""
    if signal_phase(schedule, t) is Phase.GREEN:
        return t
    return next_switch(schedule, t)


@dataclass(frozen=True)
class VehicleParams:
    """Longitudinal plant parameters of the automated vehicle."""

    mass: float = 1500.0
    rho: float = 1.2
    c_d: float = 0.32
    a_f: float = 2.2
    c_r: float = 0.015
    grav: float = 9.81
    f_t_min: float = 0.0
    f_t_max: float = 4000.0
    f_b_max: float = 6000.0
    v_min: float = 0.0
    v_max: float = 20.0

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        if self.f_t_min > self.f_t_max:
            raise ValueError("f_t_min must not exceed f_t_max")
        if self.f_b_max <= 0:
            raise ValueError("f_b_max must be positive")
        if self.v_min < 0 or self.v_max <= self.v_min:
            raise ValueError("need 0 <= v_min < v_max")

    @property
    def drag_coef(self) -> float:
        """Aerodynamic force coefficient: drag force = drag_coef * v**2."""
        return 0.5 * self.rho * self.c_d * self.a_f

    @property
    def roll_force(self) -> float:
        """Speed-independent rolling-resistance force on flat ground."""
        return self.mass * self.c_r * self.grav

    def power_loss(self, v: float) -> float:
        """Driving resistance power (W) at speed v."""
        return self.drag_coef * v**3 + self.roll_force * v

    def accel(self, f_t: float, f_b: float, v: float) -> float:
        """Longitudinal acceleration for given drive/brake forces at speed v."""
        return (f_t - f_b - self.drag_coef * v * v) / self.mass - self.c_r * self.grav
