"""Fixed-step closed-loop simulation of the two-lane corridor.

Each step advances the world by dt in a fixed sub-step order: sense
neighbors, let human drivers update patience and execute lane changes,
compute every vehicle's longitudinal command (planner tracking, headway
regulation, emergency braking, signal stop, car following), log the
instantaneous state, then integrate kinematics with a trapezoidal position
update so logged speeds integrate exactly to logged positions.  Lane
changes are instantaneous lane-index switches guarded by a cooldown.
A nonpositive gap anywhere aborts the run with a diagnostic dump.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np

from .calibration import TrajectoryLog
from .car_following import cf_acceleration, counterfactual_context, FREE_ROAD
from .config import AgentSpec, CAV, HUMAN, SCRIPTED, SimConfig
from .core import Phase, signal_phase
from .eco_ad import Case, OcpProblem, generate_case_trajectory, solve_ocp
from .energy import TripMetrics, fuel_rate, trip_fuel
from .lane_change import (
    PatienceState,
    patience_triggered,
    patience_update,
    politeness_decision,
    sample_driver_params,
)
from .longitudinal_control import (
    ControlMode,
    acc_command,
    arbitrate,
    speed_track,
    stop_decel,
)

SLOWER_MARGIN = 0.5  # leader counts as "slower" below v_des minus this


class SimAbort(RuntimeError):
    """Simulation reached an invalid state (collision); carries a dump."""

    def __init__(self, message: str, diagnostic: str = ""):
        super().__init__(message)
        self.diagnostic = diagnostic


@dataclass
class SimEvent:
    t: float
    kind: str
    vehicle_id: str
    detail: str = ""


class _Vehicle:
    """Mutable runtime record; duck-typed for counterfactual queries."""

    def __init__(self, spec: AgentSpec, cf, driver=None):
        self.id = spec.id
        self.kind = spec.kind
        self.lane = spec.lane
        self.s = spec.s0
        self.v = spec.v0
        self.a = 0.0
        self.length = spec.length
        self.cf = cf
        self.driver = driver
        self.patience = PatienceState()
        self.cooldown_until = 0.0
        self.lane_changes = 0
        self.passed: set = set()
        self.crossed_b: Optional[float] = None
        self.a_cmd = 0.0
        # automated-vehicle controller state
        self.mode: Optional[ControlMode] = None
        self.acc = None
        self.v_set = 0.0
        self.commit_stop = False
        self.stopping = False
        self.departing = False
        self.signal_aware = True
        self.plan_v: Optional[np.ndarray] = None
        self.plan_a: Optional[np.ndarray] = None
        self.plan_vf = 0.0
        # scripted profile
        self.prof_t: Optional[np.ndarray] = None
        self.prof_v: Optional[np.ndarray] = None


@dataclass
class World:
    config: SimConfig
    vehicles: List[_Vehicle]
    time: float = 0.0
    step_index: int = 0
    phase: Phase = Phase.GREEN
    events: List[SimEvent] = field(default_factory=list)
    records: Dict[str, list] = field(default_factory=dict)
    min_gap: float = math.inf

    def vehicle(self, vid: str) -> _Vehicle:
        for veh in self.vehicles:
            if veh.id == vid:
                return veh
        raise KeyError(vid)


# Case plans depend only on (schedule, vehicle, boundary data); reuse across
# repeated runs such as Monte-Carlo batches.
_PLAN_CACHE: dict = {}


def _build_plan(config: SimConfig, spec: AgentSpec):
    key = (
        spec.case, spec.cruise, spec.v0, spec.s0, spec.margin, spec.terminal_speed,
        config.signal, config.vehicle, config.control.stop_offset, config.dt,
    )
    if key in _PLAN_CACHE:
        return _PLAN_CACHE[key]
    if spec.case == "cruise":
        tf = (config.signal.s_b - spec.s0) / spec.cruise
        problem = OcpProblem(
            t0=0.0,
            tf=tf,
            v0=spec.v0,
            vf=min(spec.cruise, config.vehicle.v_max),
            s0=spec.s0,
            sf=config.signal.s_b,
            vehicle=config.vehicle,
        )
        plan = solve_ocp(problem)
        signal_aware = False
    else:
        if abs(spec.s0) > 1e-9:
            raise ValueError("case plans assume departure from intersection A (s0=0)")
        plan = generate_case_trajectory(
            Case(spec.case),
            config.signal,
            config.vehicle,
            spec.v0,
            terminal_speed=spec.terminal_speed,
            margin=spec.margin,
            stop_offset=config.control.stop_offset,
        )
        signal_aware = True
    resampled = plan.resample(config.dt)
    entry = (resampled.v.copy(), signal_aware, plan)
    _PLAN_CACHE[key] = entry
    return entry


def build_world(config: SimConfig) -> World:
    rng = np.random.default_rng(config.seed)
    vehicles: List[_Vehicle] = []
    for spec in config.agents:
        if spec.kind == CAV:
            plan_v, signal_aware, _ = _build_plan(config, spec)
            veh = _Vehicle(spec, cf=replace(config.cf_default, v0=float(np.max(plan_v))))
            veh.mode = ControlMode.ECO_AD
            veh.acc = config.control.acc_state()
            veh.signal_aware = signal_aware
            veh.plan_v = plan_v
            veh.plan_a = np.diff(plan_v) / config.dt
            veh.plan_vf = float(plan_v[-1])
            veh.v_set = float(np.max(plan_v))
        elif spec.kind == HUMAN:
            driver = spec.driver
            if spec.sample_driver:
                driver = sample_driver_params(
                    rng,
                    config.politeness_dist,
                    config.patience_dist,
                    config.v_des_dist,
                    cf_template=config.cf_default,
                )
            veh = _Vehicle(spec, cf=driver.cf, driver=driver)
        else:
            prof = np.array(spec.profile, dtype=float)
            veh = _Vehicle(spec, cf=replace(config.cf_default, v0=max(prof[:, 1].max(), 0.1)))
            veh.prof_t, veh.prof_v = prof[:, 0], prof[:, 1]
            veh.v = float(np.interp(0.0, veh.prof_t, veh.prof_v))
        vehicles.append(veh)

    world = World(config=config, vehicles=vehicles)
    world.phase = signal_phase(config.signal, 0.0)
    world.records = {k: [] for k in ("t", "vehicle_id", "lane", "s", "v", "a", "mode", "fuel_rate")}
    return world


def _sorted_lane(world: World, lane: int) -> List[_Vehicle]:
    return sorted((v for v in world.vehicles if v.lane == lane), key=lambda v: v.s)


def _leader(world: World, veh: _Vehicle) -> Optional[_Vehicle]:
    best = None
    for other in world.vehicles:
        if other is veh or other.lane != veh.lane or other.s <= veh.s:
            continue
        if best is None or other.s < best.s:
            best = other
    return best


def _check_collisions(world: World) -> None:
    for lane in (0, 1):
        ordered = _sorted_lane(world, lane)
        for follower, leader in zip(ordered, ordered[1:]):
            gap = leader.s - leader.length - follower.s
            world.min_gap = min(world.min_gap, gap)
            if gap <= 0.0:
                raise SimAbort(
                    f"collision at t={world.time:.2f}s lane {lane}: "
                    f"{follower.id} overlaps {leader.id}",
                    diagnostic=_tail_dump(world),
                )


def _tail_dump(world: World, horizon: float = 5.0) -> str:
    rec = world.records
    if not rec["t"]:
        return "(no records)"
    t_cut = world.time - horizon
    lines = ["t,vehicle_id,lane,s,v,a"]
    for i in range(len(rec["t"])):
        if rec["t"][i] >= t_cut:
            lines.append(
                f"{rec['t'][i]:.2f},{rec['vehicle_id'][i]},{rec['lane'][i]},"
                f"{rec['s'][i]:.2f},{rec['v'][i]:.3f},{rec['a'][i]:.3f}"
            )
    return "\n".join(lines)


def _clear_to_change(world: World, veh: _Vehicle, target: int) -> bool:
    clearance = world.config.min_change_clearance
    for other in world.vehicles:
        if other is veh or other.lane != target:
            continue
        if other.s >= veh.s:
            if other.s - other.length - veh.s <= clearance:
                return False
        elif veh.s - veh.length - other.s <= clearance:
            return False
    return True


def cut_back_check(world: World, veh: _Vehicle, safe_return_gap: float) -> bool:
    """Return-to-original-lane rule for a passing vehicle: the rear gap to
    the prospective follower must be safe and opening, and the politeness
    criterion (with the keep-original-lane bias) must accept the move."""
    follower = None
    for other in world.vehicles:
        if other is veh or other.lane != 0 or other.s >= veh.s:
            continue
        if follower is None or other.s > follower.s:
            follower = other
    if follower is not None:
        rear_gap = veh.s - veh.length - follower.s
        if rear_gap <= safe_return_gap:
            return False
        if follower.v > veh.v:  # still closing in; wait for margin
            return False
    ctx = counterfactual_context(world.vehicles, veh.id, 0)
    biased = replace(
        veh.driver, delta_a_th=veh.driver.delta_a_th - world.config.return_bias
    )
    return politeness_decision(ctx, biased)


def _change_lane(world: World, veh: _Vehicle, target: int) -> None:
    veh.lane = target
    veh.lane_changes += 1
    veh.patience = PatienceState()
    veh.cooldown_until = world.time + world.config.lane_change_cooldown
    world.events.append(
        SimEvent(world.time, "lane_change", veh.id, f"{1 - target}->{target}")
    )


def _human_decisions(world: World) -> None:
    cfg = world.config
    sensing = cfg.control.sensing_range
    for veh in world.vehicles:
        if veh.kind != HUMAN or veh.crossed_b is not None:
            continue  # decisions matter only inside the study corridor
        driver = veh.driver
        leader = _leader(world, veh)
        following_slower = False
        v_lead = 0.0
        if leader is not None:
            gap = leader.s - leader.length - veh.s
            v_lead = leader.v
            following_slower = gap <= sensing and v_lead < driver.v_des - SLOWER_MARGIN
        was_triggered = patience_triggered(veh.patience, driver.alpha_pa)
        veh.patience = patience_update(
            veh.patience,
            driver.v_des,
            veh.v,
            following_slower,
            dt=cfg.dt,
            index=world.step_index,
        )
        now_triggered = patience_triggered(veh.patience, driver.alpha_pa)
        if now_triggered and not was_triggered:
            world.events.append(
                SimEvent(world.time, "patience_trigger", veh.id,
                         f"loss={veh.patience.loss:.1f}")
            )
        if world.time < veh.cooldown_until:
            continue
        if veh.lane == 0:
            if not now_triggered:
                continue
            if not _clear_to_change(world, veh, 1):
                continue
            ctx = counterfactual_context(world.vehicles, veh.id, 1)
            if politeness_decision(ctx, driver):
                _change_lane(world, veh, 1)
        else:
            if not _clear_to_change(world, veh, 0):
                continue
            if cut_back_check(world, veh, cfg.safe_return_gap):
                _change_lane(world, veh, 0)


def _phase_at(world: World, t: float) -> Phase:
    return signal_phase(world.config.signal, t)


def _cav_command(world: World, veh: _Vehicle) -> float:
    cfg = world.config
    ctl = cfg.control
    plant = cfg.vehicle
    stop_line = cfg.signal.s_b - ctl.stop_offset
    d_stop = stop_line - veh.s

    leader = _leader(world, veh)
    gap = speed = None
    if leader is not None:
        g = leader.s - leader.length - veh.s
        if g <= ctl.sensing_range:
            gap, speed = g, leader.v

    new_mode = arbitrate(veh.mode, veh.v, gap, speed, world.phase, d_stop, ctl)
    if new_mode is not veh.mode:
        if veh.mode is ControlMode.ECO_AD:
            veh.v_set = veh.v  # setpoint captured when the plan is abandoned
        if veh.mode is ControlMode.STOPPED_AT_SIGNAL:
            veh.commit_stop = False
            veh.stopping = False
            veh.departing = True
            veh.v_set = ctl.depart_speed
        world.events.append(
            SimEvent(world.time, "mode_switch", veh.id,
                     f"{veh.mode.value}->{new_mode.value}")
        )
        veh.mode = new_mode

    if veh.mode is ControlMode.ECO_AD:
        k = world.step_index
        if k < veh.plan_a.size:
            a = veh.plan_a[k] + ctl.track_gain * (veh.plan_v[k] - veh.v)
        else:
            # plan exhausted: hold its terminal speed up to the intersection,
            # resume the cruise setpoint beyond it
            v_hold = veh.v_set if veh.crossed_b is not None else veh.plan_vf
            a = speed_track(veh.v, v_hold, ctl.speed_gain, ctl.a_min, ctl.a_max)
    elif veh.mode is ControlMode.ACC:
        upper = ctl.depart_accel if veh.departing else ctl.a_max
        if veh.departing and veh.v >= veh.v_set - 0.5:
            veh.departing = False
        a = speed_track(veh.v, veh.v_set, ctl.speed_gain, ctl.a_min, upper)
        if gap is not None:
            a_head, veh.acc = acc_command(veh.acc, gap, veh.v, cfg.dt)
            a = min(a, a_head)
    elif veh.mode is ControlMode.AEB:
        a = -plant.f_b_max / plant.mass
    else:  # STOPPED_AT_SIGNAL
        return -veh.v / cfg.dt  # hold exactly at standstill

    # Signal handling: planners that ignore the schedule and every reactive
    # mode must judge whether the approaching green can still be made; once
    # a miss is predicted the stop decision latches.
    if veh.crossed_b is None and veh.s < cfg.signal.s_b:
        guard = veh.mode is not ControlMode.ECO_AD or not veh.signal_aware
        if guard:
            if not veh.commit_stop and d_stop > 0.0:
                eta = world.time + d_stop / max(veh.v, 0.5)
                ok = (
                    _phase_at(world, eta) is Phase.GREEN
                    and _phase_at(world, eta + ctl.green_slack) is Phase.GREEN
                )
                if not ok:
                    veh.commit_stop = True
            if veh.commit_stop:
                if veh.stopping or stop_decel(veh.v, d_stop) >= ctl.stop_engage_decel:
                    veh.stopping = True
                    if d_stop > 0.3:
                        a = min(a, -stop_decel(veh.v, d_stop))
                    else:  # at (or a hair past) the line: stand still
                        a = min(a, -veh.v / cfg.dt)
    if veh.commit_stop and veh.v <= 0.1 and world.phase is Phase.GREEN:
        # green arrived before the line was reached; release and depart
        veh.commit_stop = False
        veh.stopping = False
        veh.departing = True
        veh.v_set = ctl.depart_speed

    a_max_phys = (plant.f_t_max - plant.drag_coef * veh.v**2) / plant.mass - plant.c_r * plant.grav
    a_min_phys = (-plant.f_b_max - plant.drag_coef * veh.v**2) / plant.mass - plant.c_r * plant.grav
    return min(max(a, a_min_phys), a_max_phys)


def _human_command(world: World, veh: _Vehicle) -> float:
    cfg = world.config
    leader = _leader(world, veh)
    if leader is None:
        a = cf_acceleration(veh.v, FREE_ROAD, 0.0, veh.cf)
    else:
        gap = leader.s - leader.length - veh.s
        a = cf_acceleration(veh.v, gap, veh.v - leader.v, veh.cf)
    stop_line = cfg.signal.s_b - cfg.control.stop_offset
    if world.phase is Phase.RED and veh.s < stop_line:
        gap_red = stop_line + veh.cf.s0 - veh.s
        a = min(a, cf_acceleration(veh.v, max(gap_red, 0.05), veh.v, veh.cf))
    return a


def _compute_commands(world: World) -> None:
    dt = world.config.dt
    for veh in world.vehicles:
        if veh.kind == CAV:
            veh.a_cmd = _cav_command(world, veh)
        elif veh.kind == HUMAN:
            veh.a_cmd = _human_command(world, veh)
        else:
            v_next = float(np.interp(world.time + dt, veh.prof_t, veh.prof_v))
            veh.a_cmd = (max(v_next, 0.0) - veh.v) / dt
        # effective acceleration after the no-reversing clamp
        v_next = veh.v + veh.a_cmd * dt
        if v_next < 0.0:
            veh.a_cmd = -veh.v / dt
        veh.a = veh.a_cmd


def _record(world: World) -> None:
    rec = world.records
    coeffs = world.config.fuel
    for veh in world.vehicles:
        rec["t"].append(world.time)
        rec["vehicle_id"].append(veh.id)
        rec["lane"].append(veh.lane)
        rec["s"].append(veh.s)
        rec["v"].append(veh.v)
        rec["a"].append(veh.a)
        if veh.kind == CAV:
            rec["mode"].append(veh.mode.value)
        else:
            rec["mode"].append(veh.kind)
        rec["fuel_rate"].append(fuel_rate(veh.v, veh.a, coeffs))


def _integrate(world: World) -> None:
    cfg = world.config
    dt = cfg.dt
    t_new = world.time + dt
    s_b = cfg.signal.s_b
    for veh in world.vehicles:
        v_new = max(0.0, veh.v + veh.a_cmd * dt)
        s_new = veh.s + 0.5 * (veh.v + v_new) * dt
        if veh.crossed_b is None and s_new >= s_b > veh.s:
            veh.crossed_b = t_new
            world.events.append(SimEvent(t_new, "crossing", veh.id, "s_b"))
        veh.v = v_new
        veh.s = s_new
    for veh in world.vehicles:
        if veh.kind != HUMAN:
            continue
        for other in world.vehicles:
            if other.kind == CAV and other.id not in veh.passed:
                if veh.s - veh.length > other.s:
                    veh.passed.add(other.id)
                    world.events.append(SimEvent(t_new, "overtake", veh.id, other.id))


def _update_phase(world: World) -> None:
    phase = _phase_at(world, world.time)
    if phase is not world.phase:
        world.phase = phase
        world.events.append(SimEvent(world.time, "phase", "signal", phase.value))


def step(world: World) -> World:
    """Advance the world by one dt; returns the same (mutated) world."""
    _update_phase(world)
    _check_collisions(world)
    _human_decisions(world)
    _compute_commands(world)
    _record(world)
    _integrate(world)
    world.time = round(world.time / world.config.dt + 1.0) * world.config.dt
    world.step_index += 1
    return world


@dataclass
class SimResult:
    config: SimConfig
    vehicle_ids: tuple
    columns: Dict[str, np.ndarray]
    events: List[SimEvent]
    trips: Dict[str, TripMetrics]
    crossing_times: Dict[str, Optional[float]]
    min_gap: float

    def series(self, vehicle_id: str) -> Dict[str, np.ndarray]:
        """Per-vehicle columns (records are vehicle-major within each step)."""
        idx = self.vehicle_ids.index(vehicle_id)
        n = len(self.vehicle_ids)
        return {k: v[idx::n] for k, v in self.columns.items()}

    def events_of(self, kind: str, vehicle_id: Optional[str] = None) -> List[SimEvent]:
        return [
            e
            for e in self.events
            if e.kind == kind and (vehicle_id is None or e.vehicle_id == vehicle_id)
        ]

    def steps_csv(self, path) -> None:
        cols = ("t", "vehicle_id", "lane", "s", "v", "a", "mode", "fuel_rate")
        with open(path, "w", newline="") as fh:
            fh.write(",".join(cols) + "\n")
            c = self.columns
            for i in range(len(c["t"])):
                fh.write(
                    f"{c['t'][i]:.6f},{c['vehicle_id'][i]},{c['lane'][i]},"
                    f"{c['s'][i]:.6f},{c['v'][i]:.6f},{c['a'][i]:.6f},"
                    f"{c['mode'][i]},{c['fuel_rate'][i]:.6f}\n"
                )

    def events_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("t,kind,vehicle_id,detail\n")
            for e in self.events:
                fh.write(f"{e.t:.6f},{e.kind},{e.vehicle_id},{e.detail}\n")

    def summary_text(self) -> str:
        lines = [
            f"duration_s: {self.config.duration:.1f}",
            f"dt_s: {self.config.dt}",
            f"seed: {self.config.seed}",
            f"min_gap_m: {self.min_gap:.3f}",
            f"lane_changes: {len(self.events_of('lane_change'))}",
            f"overtakes: {len(self.events_of('overtake'))}",
        ]
        for vid in self.vehicle_ids:
            trip = self.trips[vid]
            crossed = self.crossing_times[vid]
            lines.append(f"vehicle: {vid}")
            lines.append(
                f"  crossed_b_s: {'never' if crossed is None else f'{crossed:.2f}'}"
            )
            lines.append(f"  trip_fuel_ml: {trip.fuel_ml:.3f}")
            lines.append(f"  trip_distance_m: {trip.distance_m:.2f}")
            lines.append(f"  trip_duration_s: {trip.duration_s:.2f}")
            lines.append(f"  fuel_economy_km_per_l: {trip.fuel_economy_km_per_l:.3f}")
            lines.append(f"  idle_fuel_fraction: {trip.idle_fuel_fraction:.4f}")
        switches = [e for e in self.events if e.kind == "mode_switch"]
        if switches:
            lines.append("mode_switches:")
            lines.extend(f"  {e.t:.2f}s {e.vehicle_id} {e.detail}" for e in switches)
        return "\n".join(lines) + "\n"

    def save_summary(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.summary_text())

    def trajectory_logs(self) -> List[TrajectoryLog]:
        """The run as calibration-ready per-vehicle logs."""
        return [
            TrajectoryLog(
                vehicle_id=vid,
                t=self.series(vid)["t"],
                lane=self.series(vid)["lane"],
                s=self.series(vid)["s"],
                v=self.series(vid)["v"],
            )
            for vid in self.vehicle_ids
        ]


def _assemble_result(world: World) -> SimResult:
    cfg = world.config
    ids = tuple(v.id for v in world.vehicles)
    columns = {}
    for key, vals in world.records.items():
        if key in ("vehicle_id", "mode"):
            columns[key] = np.array(vals, dtype=object)
        elif key == "lane":
            columns[key] = np.array(vals, dtype=int)
        else:
            columns[key] = np.array(vals, dtype=float)

    trips: Dict[str, TripMetrics] = {}
    crossing: Dict[str, Optional[float]] = {}
    n = len(ids)
    for idx, vid in enumerate(ids):
        t = columns["t"][idx::n]
        s = columns["s"][idx::n]
        v = columns["v"][idx::n]
        a = columns["a"][idx::n]
        past = np.nonzero(s >= cfg.signal.s_b)[0]
        end = int(past[0]) if past.size else t.size - 1
        end = max(end, 1)
        trips[vid] = trip_fuel(t[: end + 1], v[: end + 1], a[: end + 1], cfg.fuel)
        crossing[vid] = world.vehicle(vid).crossed_b
    return SimResult(
        config=cfg,
        vehicle_ids=ids,
        columns=columns,
        events=list(world.events),
        trips=trips,
        crossing_times=crossing,
        min_gap=world.min_gap,
    )


def run(config: SimConfig) -> SimResult:
    """Run a complete scenario; deterministic for a fixed (config, seed)."""
    world = build_world(config)
    n_steps = int(math.floor(config.duration / config.dt + 1e-9))
    for _ in range(n_steps):
        step(world)
    # final observation row (no integration past the horizon)
    _update_phase(world)
    _check_collisions(world)
    _compute_commands(world)
    _record(world)
    return _assemble_result(world)
