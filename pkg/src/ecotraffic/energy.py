"""Instantaneous fuel-rate model and trip-level fuel economy metrics.

The rate is a cubic polynomial in speed plus an acceleration surcharge that
is linear in speed.  Fuel flow is cut on deceleration and the total is never
negative.  Coefficients are configuration; every comparison in the package
uses orderings and relative gaps, not absolute milliliters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FuelCoeffs:
    """mL/s = idle + lin*v + quad*v^2 + cubic*v^3 + (acc0 + acc1*v)*max(a, 0)."""

    idle: float = 0.27
    lin: float = 0.02
    quad: float = 5.0e-4
    cubic: float = 4.0e-5
    acc0: float = 0.07
    acc1: float = 0.004


@dataclass(frozen=True)
class TripMetrics:
    fuel_ml: float
    distance_m: float
    duration_s: float
    fuel_economy_km_per_l: float
    idle_fuel_fraction: float


def fuel_rate(v: float, v_dot: float, coeffs: FuelCoeffs) -> float:
    """Instantaneous fuel rate in mL/s; braking burns no extra fuel."""
    a_pos = max(0.0, v_dot)
    rate = (
        coeffs.idle
        + coeffs.lin * v
        + coeffs.quad * v * v
        + coeffs.cubic * v * v * v
        + (coeffs.acc0 + coeffs.acc1 * v) * a_pos
    )
    return max(0.0, rate)


def trip_fuel(
    t: np.ndarray,
    v: np.ndarray,
    v_dot: np.ndarray,
    coeffs: FuelCoeffs,
    idle_speed: float = 0.1,
) -> TripMetrics:
    """Trapezoidal fuel integral over a uniformly sampled speed trajectory.

    ``idle_fuel_fraction`` is the share of fuel burned while the vehicle is
    effectively standing (v < idle_speed).
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    v_dot = np.asarray(v_dot, dtype=float)
    if t.size < 2:
        raise ValueError("trip needs at least two samples")
    if t.shape != v.shape or v.shape != v_dot.shape:
        raise ValueError("t, v, v_dot must have matching shapes")
    if np.any(v < 0):
        raise ValueError("speeds must be nonnegative")

    rates = np.array([fuel_rate(vi, ai, coeffs) for vi, ai in zip(v, v_dot)])
    fuel = float(np.trapz(rates, t))
    idle_rates = np.where(v < idle_speed, rates, 0.0)
    idle_fuel = float(np.trapz(idle_rates, t))
    distance = float(np.trapz(v, t))
    duration = float(t[-1] - t[0])
    economy = (distance / 1000.0) / (fuel / 1000.0) if fuel > 0 else float("inf")
    return TripMetrics(
        fuel_ml=fuel,
        distance_m=distance,
        duration_s=duration,
        fuel_economy_km_per_l=economy,
        idle_fuel_fraction=idle_fuel / fuel if fuel > 0 else 0.0,
    )
