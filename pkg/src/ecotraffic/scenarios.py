"""Ready-made configurations for the single-corridor cut-in study.

The default corridor: intersections 600 m apart, 42 s green / 40 s red with
green onset at t = 0.  The automated vehicle departs A at 14 m/s; one human
follower starts 20 m behind (bumper to bumper) at matched speed with
politeness 1, patience tolerance 500, and an 18 m/s desired speed.

The slow-pass plan aims at the last moment of the green window (0.2 s
margin), so even a sub-second disturbance from a cut-in costs the green;
the undisturbed plan still crosses comfortably.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Optional

from .car_following import CfParams
from .config import AgentSpec, SimConfig
from .core import SignalSchedule
from .lane_change import DriverParams
from .longitudinal_control import ControlParams

SLOW_PASS_MARGIN = 0.2
PASS_MARGIN = 1.0
HUMAN_GAP0 = 20.0


def default_control() -> ControlParams:
    # conservative 2.2 s headway: the automated vehicle rides well behind a
    # cut-in vehicle, which is what costs it the razor-thin green window
    return ControlParams(t_hw=2.2)


def default_signal() -> SignalSchedule:
    return SignalSchedule(green=42.0, red=40.0, offset=0.0, s_b=600.0)


def default_human(
    p: float = 1.0, alpha_pa: float = 500.0, v_des: float = 18.0
) -> DriverParams:
    return DriverParams(p=p, alpha_pa=alpha_pa, v_des=v_des, cf=CfParams(v0=v_des))


def _cav_spec(case: str, cruise: Optional[float] = None, v0: float = 14.0) -> AgentSpec:
    margin = SLOW_PASS_MARGIN if case == "slow_pass" else PASS_MARGIN
    return AgentSpec(
        kind="cav",
        id="cav",
        lane=0,
        s0=0.0,
        v0=v0,
        case=case,
        cruise=cruise,
        margin=margin,
        terminal_speed=10.0,
    )


def _human_spec(driver: Optional[DriverParams], sample: bool, v0: float = 14.0,
                length: float = 5.0) -> AgentSpec:
    return AgentSpec(
        kind="human",
        id="h1",
        lane=0,
        s0=-(HUMAN_GAP0 + length),
        v0=v0,
        length=length,
        driver=driver,
        sample_driver=sample,
    )


def case_config(
    case: str,
    include_human: bool = True,
    driver: Optional[DriverParams] = None,
    seed: int = 7,
    duration: float = 100.0,
) -> SimConfig:
    """One of the three study cases, optionally with the human follower."""
    agents = [_cav_spec(case)]
    if include_human:
        agents.append(_human_spec(driver or default_human(), sample=False))
    return SimConfig(
        duration=duration,
        seed=seed,
        signal=default_signal(),
        control=default_control(),
        agents=tuple(agents),
    )


def cruise_config(
    cruise: float,
    driver: Optional[DriverParams] = None,
    sample_driver: bool = False,
    seed: int = 7,
    duration: float = 100.0,
) -> SimConfig:
    """Signal-blind constant-cruise plan, for sweeps and Monte-Carlo batches."""
    agents = [
        _cav_spec("cruise", cruise=cruise),
        _human_spec(None if sample_driver else (driver or default_human()),
                    sample=sample_driver),
    ]
    return SimConfig(
        duration=duration,
        seed=seed,
        signal=default_signal(),
        control=default_control(),
        agents=tuple(agents),
    )


def with_seed(config: SimConfig, seed: int) -> SimConfig:
    return replace(config, seed=seed)
