"""Simulation configuration: one document describing a complete scenario.

The on-disk form is YAML (nested key/value sections, SI units throughout).
``SimConfig.from_dict`` / ``to_dict`` are exact inverses so that a written
configuration reads back equal field-by-field.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import yaml

from .car_following import CfParams
from .core import SignalSchedule, VehicleParams
from .energy import FuelCoeffs
from .lane_change import (
    DistributionConfig,
    DriverParams,
    GENERALIZED_PARETO,
    T_LOCATION_SCALE,
)
from .longitudinal_control import ControlParams

CAV = "cav"
HUMAN = "human"
SCRIPTED = "scripted"


def default_politeness_dist() -> DistributionConfig:
    return DistributionConfig(
        family=T_LOCATION_SCALE,
        params={"loc": 0.0, "scale": 0.4, "df": 3.0},
        truncate=(-2.0, 2.0),
    )


def default_patience_dist() -> DistributionConfig:
    return DistributionConfig(
        family=GENERALIZED_PARETO,
        params={"shape": 0.2, "scale": 200.0, "loc": 0.0},
    )


def default_v_des_dist() -> DistributionConfig:
    return DistributionConfig(
        family=T_LOCATION_SCALE,
        params={"loc": 17.5, "scale": 1.2, "df": 5.0},
        truncate=(14.0, 21.0),
    )


@dataclass(frozen=True)
class AgentSpec:
    """One vehicle to spawn at t = 0."""

    kind: str
    id: str
    lane: int = 0
    s0: float = 0.0
    v0: float = 0.0
    length: float = 5.0
    # automated vehicle: driving case and its plan knobs
    case: Optional[str] = None          # slow_pass | fast_pass | stop_at_red | cruise
    cruise: Optional[float] = None      # target mean speed for the cruise case
    margin: float = 1.0                 # arrival margin before the phase switch
    terminal_speed: float = 10.0
    # human: explicit parameters, or drawn from the configured distributions
    driver: Optional[DriverParams] = None
    sample_driver: bool = False
    # scripted: piecewise-linear (t, v) speed profile, lane never changes
    profile: Optional[Tuple[Tuple[float, float], ...]] = None

    def __post_init__(self):
        if self.kind not in (CAV, HUMAN, SCRIPTED):
            raise ValueError(f"unknown agent kind {self.kind!r}")
        if self.kind == CAV and self.case is None:
            raise ValueError("automated agent needs a driving case")
        if self.kind == CAV and self.case == "cruise" and not self.cruise:
            raise ValueError("cruise case needs a cruise speed")
        if self.kind == HUMAN and self.driver is None and not self.sample_driver:
            raise ValueError("human agent needs driver params or sample_driver")
        if self.kind == SCRIPTED and not self.profile:
            raise ValueError("scripted agent needs a speed profile")


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.1
    duration: float = 100.0
    seed: int = 0
    road_length: float = 650.0
    signal: SignalSchedule = field(default_factory=lambda: SignalSchedule(42.0, 40.0))
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    fuel: FuelCoeffs = field(default_factory=FuelCoeffs)
    control: ControlParams = field(default_factory=ControlParams)
    agents: Tuple[AgentSpec, ...] = ()
    politeness_dist: DistributionConfig = field(default_factory=default_politeness_dist)
    patience_dist: DistributionConfig = field(default_factory=default_patience_dist)
    v_des_dist: DistributionConfig = field(default_factory=default_v_des_dist)
    cf_default: CfParams = field(default_factory=CfParams)
    safe_return_gap: float = 15.0
    lane_change_cooldown: float = 3.0
    min_change_clearance: float = 0.5
    # Keep-original-lane bias added to the return-leg incentive.  Without it
    # a faster overtaker facing an empty target lane has exactly zero personal
    # gain and a strictly negative follower term, so it would never return.
    return_bias: float = 0.3

    def __post_init__(self):
        if self.dt <= 0 or self.duration <= 0:
            raise ValueError("dt and duration must be positive")
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ValueError("agent ids must be unique")

    # ---- serialization ------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "dt": self.dt,
            "duration": self.duration,
            "seed": self.seed,
            "road_length": self.road_length,
            "signal": {
                "green": self.signal.green,
                "red": self.signal.red,
                "offset": self.signal.offset,
                "s_b": self.signal.s_b,
            },
            "vehicle": _plain(self.vehicle),
            "fuel": _plain(self.fuel),
            "control": _plain(self.control),
            "agents": [_agent_to_dict(a) for a in self.agents],
            "politeness_dist": _dist_to_dict(self.politeness_dist),
            "patience_dist": _dist_to_dict(self.patience_dist),
            "v_des_dist": _dist_to_dict(self.v_des_dist),
            "cf_default": _plain(self.cf_default),
            "safe_return_gap": self.safe_return_gap,
            "lane_change_cooldown": self.lane_change_cooldown,
            "min_change_clearance": self.min_change_clearance,
            "return_bias": self.return_bias,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        base = cls()
        return cls(
            dt=d.get("dt", base.dt),
            duration=d.get("duration", base.duration),
            seed=d.get("seed", base.seed),
            road_length=d.get("road_length", base.road_length),
            signal=SignalSchedule(**d["signal"]) if "signal" in d else base.signal,
            vehicle=VehicleParams(**d.get("vehicle", {})),
            fuel=FuelCoeffs(**d.get("fuel", {})),
            control=ControlParams(**d.get("control", {})),
            agents=tuple(_agent_from_dict(a) for a in d.get("agents", [])),
            politeness_dist=_dist_from_dict(d.get("politeness_dist"))
            or default_politeness_dist(),
            patience_dist=_dist_from_dict(d.get("patience_dist"))
            or default_patience_dist(),
            v_des_dist=_dist_from_dict(d.get("v_des_dist")) or default_v_des_dist(),
            cf_default=CfParams(**d.get("cf_default", {})),
            safe_return_gap=d.get("safe_return_gap", base.safe_return_gap),
            lane_change_cooldown=d.get("lane_change_cooldown", base.lane_change_cooldown),
            min_change_clearance=d.get("min_change_clearance", base.min_change_clearance),
            return_bias=d.get("return_bias", base.return_bias),
        )


def _plain(obj) -> dict:
    return {k: getattr(obj, k) for k in obj.__dataclass_fields__}


def _dist_to_dict(dist: DistributionConfig) -> dict:
    out = {"family": dist.family, "params": dict(dist.params)}
    if dist.truncate is not None:
        out["truncate"] = list(dist.truncate)
    return out


def _dist_from_dict(d) -> Optional[DistributionConfig]:
    if d is None:
        return None
    truncate = d.get("truncate")
    return DistributionConfig(
        family=d["family"],
        params=dict(d["params"]),
        truncate=tuple(truncate) if truncate is not None else None,
    )


def _driver_to_dict(driver: DriverParams) -> dict:
    out = _plain(driver)
    out["cf"] = _plain(driver.cf)
    return out


def _driver_from_dict(d: dict) -> DriverParams:
    d = dict(d)
    cf = CfParams(**d.pop("cf", {}))
    return DriverParams(cf=cf, **d)


def _agent_to_dict(a: AgentSpec) -> dict:
    out = {"kind": a.kind, "id": a.id, "lane": a.lane, "s0": a.s0, "v0": a.v0,
           "length": a.length}
    if a.kind == CAV:
        out.update(case=a.case, margin=a.margin, terminal_speed=a.terminal_speed)
        if a.cruise is not None:
            out["cruise"] = a.cruise
    elif a.kind == HUMAN:
        out["driver"] = "sample" if a.sample_driver else _driver_to_dict(a.driver)
    else:
        out["profile"] = [list(p) for p in a.profile]
    return out


def _agent_from_dict(d: dict) -> AgentSpec:
    kind = d["kind"]
    common = {k: d[k] for k in ("id", "lane", "s0", "v0", "length") if k in d}
    if kind == CAV:
        return AgentSpec(
            kind=kind,
            case=d["case"],
            cruise=d.get("cruise"),
            margin=d.get("margin", 1.0),
            terminal_speed=d.get("terminal_speed", 10.0),
            **common,
        )
    if kind == HUMAN:
        driver = d.get("driver")
        if driver == "sample":
            return AgentSpec(kind=kind, sample_driver=True, **common)
        return AgentSpec(kind=kind, driver=_driver_from_dict(driver), **common)
    if kind == SCRIPTED:
        profile = tuple(tuple(float(x) for x in p) for p in d["profile"])
        return AgentSpec(kind=kind, profile=profile, **common)
    raise ValueError(f"unknown agent kind {kind!r}")


def load_config(path) -> SimConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: not a mapping document")
    return SimConfig.from_dict(data)


def save_config(config: SimConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=False)
