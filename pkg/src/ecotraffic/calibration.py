"""Driver-model calibration from trajectory logs.

The pipeline mirrors how the decision model is meant to be fitted from
naturalistic data, exercised here on synthetic logs: smooth numerical
differentiation of logged speeds, extraction of cut-in events (for the
politeness factor) and of overtake episodes (for the patience tolerance),
per-event point estimation, and maximum-likelihood fitting of the
distribution families with a Kolmogorov-Smirnov score for family selection.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import signal, stats

from .lane_change import (
    DistributionConfig,
    EXPONENTIAL,
    GENERALIZED_EXTREME_VALUE,
    GENERALIZED_PARETO,
    T_LOCATION_SCALE,
)
from .lane_change import PATIENCE_SAMPLE_DT


@dataclass
class TrajectoryLog:
    """Uniformly sampled time series of one vehicle."""

    vehicle_id: str
    t: np.ndarray
    lane: np.ndarray
    s: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.lane = np.asarray(self.lane, dtype=int)
        self.s = np.asarray(self.s, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.t.size < 2:
            raise ValueError("log needs at least two samples")
        steps = np.diff(self.t)
        if np.any(steps <= 0):
            raise ValueError("time must be strictly increasing")
        if np.max(np.abs(steps - steps[0])) > 1e-6:
            raise ValueError("sampling interval must be uniform")

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])


@dataclass
class LaneChangeEvent:
    """One extracted lane change with whatever context the query yields.

    Cut-in events (observer-based) carry the four context accelerations;
    overtake episodes carry the accumulated velocity loss and the desired
    speed estimate.  Missing pieces stay None and estimators skip them.
    """

    subject_id: str
    index: int
    t: float
    observer_id: Optional[str] = None
    a_c: Optional[float] = None
    a_c_new: Optional[float] = None
    a_n: Optional[float] = None
    a_n_new: Optional[float] = None
    velocity_loss: Optional[float] = None
    v_des_est: Optional[float] = None
    n_t1: Optional[int] = None


def smooth_differentiate(series: np.ndarray, window: int = 11, order: int = 2,
                         dt: float = 0.1) -> np.ndarray:
    """Local-polynomial (Savitzky-Golay) first derivative of a sampled series.

    Exact for polynomials up to the fit order; endpoints come from one-sided
    fits over the edge windows.
    """
    series = np.asarray(series, dtype=float)
    if window % 2 == 0:
        raise ValueError("window must be odd")
    if order >= window:
        raise ValueError("polynomial order must be below the window length")
    if series.size <= window:
        raise ValueError(f"series length {series.size} too short for window {window}")
    return signal.savgol_filter(series, window, order, deriv=1, delta=dt, mode="interp")


def _change_indices(lane: np.ndarray) -> np.ndarray:
    return np.nonzero(np.diff(lane) != 0)[0] + 1


def _leader_at(logs: Sequence[TrajectoryLog], subject: TrajectoryLog, k: int,
               lane: int, sensing_range: float) -> Optional[TrajectoryLog]:
    best = None
    best_s = math.inf
    for other in logs:
        if other.vehicle_id == subject.vehicle_id:
            continue
        if other.lane[k] != lane:
            continue
        if subject.s[k] < other.s[k] < best_s:
            if other.s[k] - subject.s[k] <= sensing_range:
                best, best_s = other, other.s[k]
    return best


def _common_grid(logs: Sequence[TrajectoryLog]) -> None:
    t0 = logs[0].t
    for log in logs[1:]:
        if log.t.size != t0.size or np.max(np.abs(log.t - t0)) > 1e-9:
            raise ValueError("all logs of a scene must share one time grid")


def extract_events(
    logs: Sequence[TrajectoryLog],
    before_offset: float = 0.5,
    after_offset: float = 1.5,
    window: int = 11,
) -> List[LaneChangeEvent]:
    """Cut-in events: a vehicle changes into an observer's lane ahead of it.

    The observer must hold its own lane throughout the measurement window and
    the subject must become the observer's nearest leader.  Before/after
    accelerations are sampled at the configured offsets around the change
    instant from smoothed derivatives of the logged speeds.
    """
    if len(logs) < 2:
        return []
    _common_grid(logs)
    dt = logs[0].dt
    nb = int(round(before_offset / dt))
    na = int(round(after_offset / dt))
    margin = window // 2
    accels = {log.vehicle_id: smooth_differentiate(log.v, window, dt=dt) for log in logs}

    events: List[LaneChangeEvent] = []
    for subject in logs:
        for k in _change_indices(subject.lane):
            if k - nb - margin < 0 or k + na + margin >= subject.t.size:
                continue
            new_lane = int(subject.lane[k])
            for observer in logs:
                if observer.vehicle_id == subject.vehicle_id:
                    continue
                lo, hi = k - nb - margin, k + na + margin + 1
                if np.any(observer.lane[lo:hi] != observer.lane[k]):
                    continue  # observer itself is changing lanes
                if observer.lane[k] != new_lane:
                    continue
                if subject.s[k] <= observer.s[k]:
                    continue  # cut-in must land ahead of the observer
                leader = _leader_at(logs, observer, k, new_lane, math.inf)
                if leader is not subject:
                    continue
                a_subj = accels[subject.vehicle_id]
                a_obs = accels[observer.vehicle_id]
                events.append(
                    LaneChangeEvent(
                        subject_id=subject.vehicle_id,
                        observer_id=observer.vehicle_id,
                        index=int(k),
                        t=float(subject.t[k]),
                        a_c=float(a_subj[k - nb]),
                        a_c_new=float(a_subj[k + na]),
                        a_n=float(a_obs[k - nb]),
                        a_n_new=float(a_obs[k + na]),
                    )
                )
    events.sort(key=lambda e: (e.t, e.subject_id, e.observer_id or ""))
    return events


def extract_overtake_episodes(
    logs: Sequence[TrajectoryLog],
    sensing_range: float = 120.0,
    slower_margin: float = 0.5,
    v_des_window: float = 5.0,
) -> List[LaneChangeEvent]:
    """Overtake episodes: follow a slower leader, change lane, then pass it.

    The desired speed is estimated as the subject's maximum speed within the
    post-change window; the accumulated velocity loss is summed over the
    contiguous slower-leader block that ends at the change instant.
    """
    if not logs:
        return []
    _common_grid(logs)
    dt = logs[0].dt
    nw = int(round(v_des_window / dt))

    episodes: List[LaneChangeEvent] = []
    for subject in logs:
        for k in _change_indices(subject.lane):
            if k + nw >= subject.t.size:
                continue
            old_lane = int(subject.lane[k - 1])
            v_des = float(np.max(subject.v[k : k + nw + 1]))
            leader = _leader_at(logs, subject, k - 1, old_lane, sensing_range)
            if leader is None:
                continue
            passed = np.any(subject.s[k:] > leader.s[k:] + 1e-9)
            if not passed:
                continue
            start = k - 1
            while start >= 0:
                lead_now = _leader_at(logs, subject, start, old_lane, sensing_range)
                if lead_now is not leader or lead_now.v[start] >= v_des - slower_margin:
                    break
                start -= 1
            n_t1 = start + 1
            if n_t1 >= k:
                continue  # no slower-leader phase
            deficit = v_des - subject.v[n_t1 : k + 1]
            loss = float(np.sum(deficit)) * (dt / PATIENCE_SAMPLE_DT)
            episodes.append(
                LaneChangeEvent(
                    subject_id=subject.vehicle_id,
                    index=int(k),
                    t=float(subject.t[k]),
                    velocity_loss=loss,
                    v_des_est=v_des,
                    n_t1=int(n_t1),
                )
            )
    episodes.sort(key=lambda e: (e.t, e.subject_id))
    return episodes


def estimate_politeness(event: LaneChangeEvent, eps: float = 0.05) -> Optional[float]:
    """Indifference-point inversion of the incentive rule at the change.

    Returns the politeness at which the observed change is exactly
    break-even; None when the new follower was essentially unaffected.
    """
    if event.a_c is None or event.a_n is None:
        return None
    dn = event.a_n_new - event.a_n
    if abs(dn) <= eps:
        return None
    return -(event.a_c_new - event.a_c) / dn


def estimate_patience(event: LaneChangeEvent) -> Optional[float]:
    """Accumulated velocity loss at the change onset; None without a
    slower-leader phase."""
    return event.velocity_loss


def politeness_samples(events: Sequence[LaneChangeEvent], eps: float = 0.05):
    """All usable politeness estimates plus the skipped-event count."""
    vals = [estimate_politeness(e, eps) for e in events]
    kept = np.array([v for v in vals if v is not None], dtype=float)
    return kept, sum(v is None for v in vals)


def patience_samples(events: Sequence[LaneChangeEvent]):
    vals = [estimate_patience(e) for e in events]
    kept = np.array([v for v in vals if v is not None], dtype=float)
    return kept, sum(v is None for v in vals)


@dataclass
class FitResult:
    config: DistributionConfig
    log_likelihood: float
    ks_stat: float
    n_samples: int


_T_DF_GRID = (2.0, 3.0, 5.0, 10.0, 30.0)


def fit_distribution(samples: np.ndarray, family: str) -> FitResult:
    """Maximum-likelihood fit of one family plus a KS family-selection score."""
    x = np.asarray(samples, dtype=float)
    if x.size < 50:
        raise ValueError(f"need at least 50 samples, got {x.size}")
    if float(np.std(x)) < 1e-12:
        raise ValueError("degenerate (zero-variance) samples")

    if family == EXPONENTIAL:
        mean = float(np.mean(x))
        if np.any(x < 0) or mean <= 0:
            raise ValueError("exponential fit requires nonnegative samples")
        rate = 1.0 / mean
        frozen = stats.expon(scale=mean)
        params = {"rate": rate}
    elif family == T_LOCATION_SCALE:
        best = None
        for df in _T_DF_GRID:
            loc, scale = stats.t.fit(x, f0=df)[1:]
            ll = float(np.sum(stats.t.logpdf(x, df, loc, scale)))
            if best is None or ll > best[0]:
                best = (ll, df, loc, scale)
        _, df, loc, scale = best
        frozen = stats.t(df=df, loc=loc, scale=scale)
        params = {"loc": float(loc), "scale": float(scale), "df": float(df)}
    elif family == GENERALIZED_PARETO:
        if np.any(x < 0):
            raise ValueError("generalized Pareto fit expects nonnegative samples")
        shape, _, scale = stats.genpareto.fit(x, floc=0.0)
        frozen = stats.genpareto(c=shape, loc=0.0, scale=scale)
        params = {"shape": float(shape), "scale": float(scale), "loc": 0.0}
    elif family == GENERALIZED_EXTREME_VALUE:
        c, loc, scale = stats.genextreme.fit(x)
        frozen = stats.genextreme(c=c, loc=loc, scale=scale)
        params = {"shape": float(-c), "loc": float(loc), "scale": float(scale)}
    else:
        raise ValueError(f"unsupported family {family!r}")

    ll = float(np.sum(frozen.logpdf(x)))
    ks = float(stats.kstest(x, frozen.cdf).statistic)
    return FitResult(
        config=DistributionConfig(family=family, params=params),
        log_likelihood=ll,
        ks_stat=ks,
        n_samples=int(x.size),
    )


def save_logs(logs: Sequence[TrajectoryLog], path) -> None:
    """One scene per CSV file, columns t, vehicle_id, lane, s, v."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "vehicle_id", "lane", "s", "v"])
        for log in logs:
            for i in range(log.t.size):
                writer.writerow(
                    [
                        f"{log.t[i]:.4f}",
                        log.vehicle_id,
                        int(log.lane[i]),
                        f"{log.s[i]:.4f}",
                        f"{log.v[i]:.4f}",
                    ]
                )


def load_logs(path) -> List[TrajectoryLog]:
    """Read one scene; extra columns (a, mode, ...) are ignored."""
    series: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"t", "vehicle_id", "lane", "s", "v"}
        if not required.issubset(reader.fieldnames or ()):
            raise ValueError(f"{path}: missing columns {required - set(reader.fieldnames or ())}")
        for row in reader:
            rec = series.setdefault(row["vehicle_id"], ([], [], [], []))
            rec[0].append(float(row["t"]))
            rec[1].append(int(float(row["lane"])))
            rec[2].append(float(row["s"]))
            rec[3].append(float(row["v"]))
    return [
        TrajectoryLog(vehicle_id=vid, t=np.array(t), lane=np.array(lane),
                      s=np.array(s), v=np.array(v))
        for vid, (t, lane, s, v) in sorted(series.items())
    ]


def load_log_dir(directory) -> List[List[TrajectoryLog]]:
    paths = sorted(Path(directory).glob("*.csv"))
    if not paths:
        raise FileNotFoundError(f"no trajectory CSVs under {directory}")
    return [load_logs(p) for p in paths]
