"""Human lane-change decision model.

Two gates decide an overtake.  The tactical gate is a patience accumulator:
the running sum of per-sample speed deficits behind a slower leader, compared
against the driver's tolerance.  The operational gate is an acceleration-based
incentive: the driver's own gain from changing lanes, weighted against the
disadvantage imposed on the new follower through a politeness factor.
Driver parameters are drawn from configurable distribution families.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import stats

from .car_following import CfParams

# Supported distribution families.
T_LOCATION_SCALE = "t_location_scale"
GENERALIZED_PARETO = "generalized_pareto"
GENERALIZED_EXTREME_VALUE = "generalized_extreme_value"
EXPONENTIAL = "exponential"
FIXED = "fixed"

_FAMILY_PARAMS = {
    T_LOCATION_SCALE: ("loc", "scale", "df"),
    GENERALIZED_PARETO: ("shape", "scale", "loc"),
    GENERALIZED_EXTREME_VALUE: ("shape", "loc", "scale"),
    EXPONENTIAL: ("rate",),
    FIXED: ("value",),
}

# Reference sampling interval of the patience rule; one accumulator unit is
# one (m/s) deficit held for one 10 Hz sample.
PATIENCE_SAMPLE_DT = 0.1


@dataclass(frozen=True)
class DriverParams:
    """One human agent's decision parameters plus its car-following law."""

    p: float
    alpha_pa: float
    v_des: float
    delta_a_th: float = 0.0
    b_safe: float = 4.0
    cf: CfParams = field(default_factory=CfParams)

    def __post_init__(self):
        if self.v_des <= 0:
            raise ValueError("desired speed must be positive")
        if self.b_safe <= 0:
            raise ValueError("b_safe must be positive")
        if self.alpha_pa < 0:
            raise ValueError("patience tolerance must be nonnegative")


@dataclass(frozen=True)
class LaneChangeContext:
    """Accelerations before / after a hypothetical lane change.

    ``a_c`` is the subject driver, ``a_n`` the prospective new follower in
    the target lane, ``a_o`` the old follower left behind; ``*_new`` values
    are the counterfactual accelerations if the change were executed now.
    """

    a_c: float
    a_c_new: float
    a_n: float = 0.0
    a_n_new: float = 0.0
    a_o: float = 0.0
    a_o_new: float = 0.0

    def __post_init__(self):
        for name in ("a_c", "a_c_new", "a_n", "a_n_new", "a_o", "a_o_new"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


@dataclass(frozen=True)
class PatienceState:
    """Running speed-deficit sum behind a slower leader."""

    loss: float = 0.0
    active: bool = False
    start_index: Optional[int] = None


def incentive_gain(ctx: LaneChangeContext, p: float) -> float:
    """Reduced lane-change incentive: driver gain plus weighted new-follower loss."""
    return (ctx.a_c_new - ctx.a_c) + p * (ctx.a_n_new - ctx.a_n)


def full_incentive_gain(ctx: LaneChangeContext, p: float) -> float:
    """Incentive including the old-follower term.

    Equals :func:`incentive_gain` whenever the old follower's acceleration
    is unchanged, which is how the simulator builds its contexts.
    """
    return incentive_gain(ctx, p) + p * (ctx.a_o_new - ctx.a_o)


def politeness_decision(ctx: LaneChangeContext, params: DriverParams) -> bool:
    """True iff the weighted incentive clears the threshold and the change
    does not force the new follower to brake harder than ``b_safe``."""
    if ctx.a_n_new < -params.b_safe:
        return False
    return incentive_gain(ctx, params.p) > params.delta_a_th


def patience_update(
    state: PatienceState,
    v_des: float,
    v_h: float,
    following_slower_leader: bool,
    dt: float = PATIENCE_SAMPLE_DT,
    index: Optional[int] = None,
) -> PatienceState:
    """Advance the accumulator by one sample.

    Deficits are scaled by dt / 0.1 s so the accumulated value keeps the
    10 Hz convention regardless of the simulation step.  The sum is floored
    at zero and resets entirely once no slower leader is followed.
    """
    if not following_slower_leader:
        return PatienceState()
    loss = max(0.0, state.loss + (v_des - v_h) * (dt / PATIENCE_SAMPLE_DT))
    start = state.start_index if state.active else index
    return PatienceState(loss=loss, active=True, start_index=start)


def patience_triggered(state: PatienceState, alpha_pa: float) -> bool:
    """Strict threshold: an exactly-at-tolerance sum does not trigger."""
    return state.loss > alpha_pa


@dataclass(frozen=True)
class DistributionConfig:
    """One univariate distribution with optional truncation interval."""

    family: str
    params: dict = field(default_factory=dict)
    truncate: Optional[tuple] = None

    def __post_init__(self):
        if self.family not in _FAMILY_PARAMS:
            raise ValueError(f"unknown family {self.family!r}")
        required = _FAMILY_PARAMS[self.family]
        missing = [k for k in required if k not in self.params and k != "loc"]
        if missing:
            raise ValueError(f"{self.family} requires parameters {missing}")
        scale = self.params.get("scale")
        if scale is not None and scale <= 0:
            raise ValueError("scale must be positive")
        rate = self.params.get("rate")
        if rate is not None and rate <= 0:
            raise ValueError("rate must be positive")
        df = self.params.get("df")
        if df is not None and df <= 0:
            raise ValueError("df must be positive")
        if self.truncate is not None:
            lo, hi = self.truncate
            if not lo < hi:
                raise ValueError("truncation interval must be nonempty")
            object.__setattr__(self, "truncate", (float(lo), float(hi)))


def _frozen(config: DistributionConfig):
    """scipy frozen distribution for a config (FIXED has no scipy form)."""
    p = config.params
    if config.family == T_LOCATION_SCALE:
        return stats.t(df=p["df"], loc=p["loc"], scale=p["scale"])
    if config.family == GENERALIZED_PARETO:
        return stats.genpareto(c=p["shape"], loc=p.get("loc", 0.0), scale=p["scale"])
    if config.family == GENERALIZED_EXTREME_VALUE:
        # scipy's shape sign is opposite to the heavy-tail-positive convention
        return stats.genextreme(c=-p["shape"], loc=p.get("loc", 0.0), scale=p["scale"])
    if config.family == EXPONENTIAL:
        return stats.expon(scale=1.0 / p["rate"])
    raise ValueError(f"no continuous form for family {config.family!r}")


def _truncation_mass(config: DistributionConfig, dist) -> tuple:
    if config.truncate is None:
        return 0.0, 1.0
    lo, hi = config.truncate
    c_lo, c_hi = dist.cdf(lo), dist.cdf(hi)
    if c_hi - c_lo <= 1e-12:
        raise ValueError("truncated support carries no probability mass")
    return c_lo, c_hi


def dist_pdf(config: DistributionConfig, x):
    """Density at x, renormalized over the truncation interval if any."""
    if config.family == FIXED:
        raise ValueError("point-mass distribution has no density")
    dist = _frozen(config)
    c_lo, c_hi = _truncation_mass(config, dist)
    x = np.asarray(x, dtype=float)
    out = dist.pdf(x) / (c_hi - c_lo)
    if config.truncate is not None:
        lo, hi = config.truncate
        out = np.where((x >= lo) & (x <= hi), out, 0.0)
    return out if out.ndim else float(out)


def dist_sample(config: DistributionConfig, rng: np.random.Generator, size=None):
    """Inverse-CDF sampling, exact under truncation; deterministic per rng state."""
    if config.family == FIXED:
        value = config.params["value"]
        return value if size is None else np.full(size, value)
    dist = _frozen(config)
    c_lo, c_hi = _truncation_mass(config, dist)
    u = rng.uniform(c_lo, c_hi, size=size)
    out = dist.ppf(u)
    return float(out) if size is None else out


def sample_driver_params(
    rng: np.random.Generator,
    politeness_dist: DistributionConfig,
    patience_dist: DistributionConfig,
    v_des_dist: DistributionConfig,
    cf_template: CfParams = CfParams(),
    delta_a_th: float = 0.0,
    b_safe: float = 4.0,
) -> DriverParams:
    """Draw one driver.  The draw order (p, alpha, v_des) is part of the
    reproducibility contract; the car-following free speed is tied to the
    sampled desired speed."""
    p = dist_sample(politeness_dist, rng)
    alpha = max(0.0, dist_sample(patience_dist, rng))
    v_des = dist_sample(v_des_dist, rng)
    if v_des <= 0:
        raise ValueError("sampled desired speed must be positive; truncate the config")
    return DriverParams(
        p=p,
        alpha_pa=alpha,
        v_des=v_des,
        delta_a_th=delta_a_th,
        b_safe=b_safe,
        cf=replace(cf_template, v0=v_des),
    )
