"""Energy-optimal speed planning between two signalized intersections.

The planner minimizes driving-resistance power plus a braking-force penalty
subject to longitudinal dynamics, force and speed bounds, and soft-exact
terminal conditions on speed and position.  Two independent solution paths
are provided: trapezoidal direct collocation solved by an augmented
Lagrangian with a bound-projected quasi-Newton inner step, and a backward
dynamic program over a (time, speed) lattice whose distance requirement is
met through a bisected linear distance price.  Each validates the other.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import optimize

from .core import Phase, SignalSchedule, VehicleParams, green_end, signal_phase


class InfeasibleProblemError(ValueError):
    """Boundary data violate the reachability sanity check."""


class ConvergenceError(RuntimeError):
    """Solver ran out of iterations; carries the last iterate."""

    def __init__(self, message, trajectory=None, residual=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.residual = residual


class GridTooCoarseError(RuntimeError):
    """The DP lattice cannot reach the requested terminal set."""


class CaseInfeasibleError(ValueError):
    """The signal schedule does not admit the requested driving case."""


class Case(str, enum.Enum):
    SLOW_PASS = "slow_pass"
    FAST_PASS = "fast_pass"
    STOP_AT_RED = "stop_at_red"


@dataclass(frozen=True)
class OcpProblem:
    t0: float
    tf: float
    v0: float
    vf: float
    s0: float
    sf: float
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    w_power: float = 1.0       # weight on resistance power loss
    w_brake: float = 1e-4      # weight on squared braking force
    w_term_v: float = 1e4      # soft-exact terminal speed weight
    w_term_s: float = 1e4      # soft-exact terminal position weight

    def __post_init__(self):
        if self.tf <= self.t0:
            raise ValueError("tf must exceed t0")
        if self.sf <= self.s0:
            raise ValueError("sf must exceed s0")
        veh = self.vehicle
        for name, val in (("v0", self.v0), ("vf", self.vf)):
            if not veh.v_min <= val <= veh.v_max:
                raise ValueError(f"{name}={val} outside speed bounds")

    @property
    def duration(self) -> float:
        return self.tf - self.t0

    @property
    def distance(self) -> float:
        return self.sf - self.s0


@dataclass
class Trajectory:
    """Time-gridded plan: speed, position, drive and brake force per node."""

    t: np.ndarray
    v: np.ndarray
    s: np.ndarray
    f_t: np.ndarray
    f_b: np.ndarray
    meta: dict = field(default_factory=dict)

    def accel(self, vehicle: VehicleParams) -> np.ndarray:
        return vehicle.accel(self.f_t, self.f_b, self.v)

    def resample(self, dt: float) -> "Trajectory":
        """Linear re-interpolation onto a uniform dt grid."""
        n = int(math.floor((self.t[-1] - self.t[0]) / dt)) + 1
        tq = self.t[0] + dt * np.arange(n)
        return Trajectory(
            t=tq,
            v=np.interp(tq, self.t, self.v),
            s=np.interp(tq, self.t, self.s),
            f_t=np.interp(tq, self.t, self.f_t),
            f_b=np.interp(tq, self.t, self.f_b),
            meta=dict(self.meta, resampled_dt=dt),
        )


def _trapz_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


def trajectory_cost(problem: OcpProblem, traj: Trajectory) -> float:
    """The planning objective evaluated on any trajectory (shared scoring)."""
    veh = problem.vehicle
    running = problem.w_power * veh.power_loss(traj.v) + problem.w_brake * traj.f_b**2
    cost = float(np.trapz(running, traj.t))
    cost += problem.w_term_v * (traj.v[-1] - problem.vf) ** 2
    cost += problem.w_term_s * (traj.s[-1] - problem.sf) ** 2
    return cost


def check_trajectory(problem: OcpProblem, traj: Trajectory) -> dict:
    """Worst-case violations of bounds, dynamics, and terminal conditions."""
    veh = problem.vehicle
    h = np.diff(traj.t)
    f = veh.accel(traj.f_t, traj.f_b, traj.v)
    residual = np.diff(traj.v) - 0.5 * h * (f[:-1] + f[1:])
    return {
        "v_low": float(np.max(veh.v_min - traj.v, initial=0.0)),
        "v_high": float(np.max(traj.v - veh.v_max, initial=0.0)),
        "f_t_low": float(np.max(veh.f_t_min - traj.f_t, initial=0.0)),
        "f_t_high": float(np.max(traj.f_t - veh.f_t_max, initial=0.0)),
        "f_b_low": float(np.max(-traj.f_b, initial=0.0)),
        "f_b_high": float(np.max(traj.f_b - veh.f_b_max, initial=0.0)),
        "dynamics": float(np.max(np.abs(residual), initial=0.0)),
        "terminal_v": abs(float(traj.v[-1]) - problem.vf),
        "terminal_s": abs(float(traj.s[-1]) - problem.sf),
    }


def _feasibility_check(problem: OcpProblem) -> None:
    veh = problem.vehicle
    lo = veh.v_min * problem.duration
    hi = veh.v_max * problem.duration
    if not lo - 1e-9 <= problem.distance <= hi + 1e-9:
        raise InfeasibleProblemError(
            f"distance {problem.distance:.1f} m unreachable in {problem.duration:.1f} s "
            f"with speeds in [{veh.v_min}, {veh.v_max}] m/s"
        )


def _initial_guess(problem: OcpProblem, n: int, w: np.ndarray):
    veh = problem.vehicle
    v = np.linspace(problem.v0, problem.vf, n)
    v_mean = float(w @ v) / problem.duration
    v = v + (problem.distance / problem.duration - v_mean)
    v[0], v[-1] = problem.v0, problem.vf
    v = np.clip(v, veh.v_min, veh.v_max)
    kd = veh.drag_coef / veh.mass
    roll = veh.c_r * veh.grav
    h = problem.duration / (n - 1)
    f_req = np.gradient(v, h) + kd * v * v + roll
    ut = np.clip(f_req, veh.f_t_min / veh.mass, veh.f_t_max / veh.mass)
    ub = np.clip(ut - f_req, 0.0, veh.f_b_max / veh.mass)
    return v, ut, ub


def solve_ocp(
    problem: OcpProblem,
    n_nodes: Optional[int] = None,
    dyn_tol: float = 1e-6,
    max_outer: int = 40,
) -> Trajectory:
    """Trapezoidal collocation solved by an augmented Lagrangian.

    Dynamics defects are the only nonlinear equality constraints (position is
    an exact trapezoidal integral of speed, so it is eliminated).  The inner
    bound-constrained minimization uses a projected quasi-Newton step; the
    outer loop updates multipliers until every defect is below ``dyn_tol``.
    """
    _feasibility_check(problem)
    veh = problem.vehicle
    n = n_nodes if n_nodes is not None else max(31, int(round(problem.duration / 0.2)) + 1)
    if n < 3:
        raise ValueError("need at least 3 collocation nodes")
    h = problem.duration / (n - 1)
    w = _trapz_weights(n, h)
    kd = veh.drag_coef / veh.mass
    roll = veh.c_r * veh.grav
    m2 = veh.mass * veh.mass

    lb = np.concatenate(
        [
            np.full(n, veh.v_min),
            np.full(n, veh.f_t_min / veh.mass),
            np.zeros(n),
        ]
    )
    ub_bound = np.concatenate(
        [
            np.full(n, veh.v_max),
            np.full(n, veh.f_t_max / veh.mass),
            np.full(n, veh.f_b_max / veh.mass),
        ]
    )
    lb[0] = ub_bound[0] = problem.v0  # pin the initial speed
    bounds = optimize.Bounds(lb, ub_bound)

    def split(z):
        return z[:n], z[n : 2 * n], z[2 * n :]

    def defects(v, ut, ub):
        f = ut - ub - kd * v * v - roll
        return v[1:] - v[:-1] - 0.5 * h * (f[:-1] + f[1:])

    def al_value_grad(z, lam, mu):
        v, ut, ub = split(z)
        s_end = problem.s0 + float(w @ v)
        dv_term = v[-1] - problem.vf
        ds_term = s_end - problem.sf

        cost = float(
            w @ (problem.w_power * (veh.drag_coef * v**3 + veh.roll_force * v)
                 + problem.w_brake * m2 * ub * ub)
        )
        cost += problem.w_term_v * dv_term**2 + problem.w_term_s * ds_term**2

        g = defects(v, ut, ub)
        q = lam + mu * g
        cost += float(lam @ g) + 0.5 * mu * float(g @ g)

        grad_v = w * (problem.w_power * (3.0 * veh.drag_coef * v * v + veh.roll_force))
        grad_v += 2.0 * problem.w_term_s * ds_term * w
        grad_v[-1] += 2.0 * problem.w_term_v * dv_term
        # defect coupling: node i appears in defect i (as left node) and i-1 (right)
        grad_v[:-1] += q * (-1.0 + h * kd * v[:-1])
        grad_v[1:] += q * (1.0 + h * kd * v[1:])

        grad_ut = np.zeros(n)
        grad_ut[:-1] -= 0.5 * h * q
        grad_ut[1:] -= 0.5 * h * q

        grad_ub = w * (2.0 * problem.w_brake * m2 * ub)
        grad_ub[:-1] += 0.5 * h * q
        grad_ub[1:] += 0.5 * h * q

        return cost, np.concatenate([grad_v, grad_ut, grad_ub])

    v_init, ut_init, ub_init = _initial_guess(problem, n, w)
    z = np.concatenate([v_init, ut_init, ub_init])
    lam = np.zeros(n - 1)
    # Penalty scaled to the running-cost magnitude so early iterations are
    # neither constraint-blind nor ill-conditioned.
    cost_scale = max(1.0, problem.w_power * veh.power_loss(max(problem.v0, 1.0)))
    mu = 10.0 * cost_scale
    prev_norm = np.inf
    total_inner = 0
    result = None

    for outer in range(max_outer):
        result = optimize.minimize(
            al_value_grad,
            z,
            args=(lam, mu),
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": 600, "maxfun": 4000, "ftol": 1e-14, "gtol": 1e-10},
        )
        z = result.x
        total_inner += result.nit
        v, ut, ub = split(z)
        g = defects(v, ut, ub)
        g_norm = float(np.max(np.abs(g)))
        if g_norm <= dyn_tol:
            break
        lam = lam + mu * g
        if g_norm > 0.25 * prev_norm:
            mu = min(mu * 8.0, 1e9 * cost_scale)
        prev_norm = g_norm
    else:
        traj = _assemble(problem, z, n, w)
        raise ConvergenceError(
            f"dynamics residual {g_norm:.2e} above {dyn_tol:.1e} "
            f"after {max_outer} multiplier updates",
            trajectory=traj,
            residual=g_norm,
        )

    # First-order optimality: gradient projected onto the active bounds.
    _, grad = al_value_grad(z, lam, mu)
    at_lo = (z <= lb + 1e-12) & (grad > 0)
    at_hi = (z >= ub_bound - 1e-12) & (grad < 0)
    proj = np.where(at_lo | at_hi, 0.0, grad)
    kkt = float(np.max(np.abs(proj))) / cost_scale

    traj = _assemble(problem, z, n, w)
    traj.meta.update(
        cost=trajectory_cost(problem, traj),
        method="collocation",
        outer_iterations=outer + 1,
        inner_iterations=total_inner,
        dyn_residual=g_norm,
        kkt_residual=kkt,
    )
    return traj


def _assemble(problem: OcpProblem, z: np.ndarray, n: int, w: np.ndarray) -> Trajectory:
    veh = problem.vehicle
    v, ut, ub = z[:n], z[n : 2 * n], z[2 * n :]
    t = np.linspace(problem.t0, problem.tf, n)
    h = problem.duration / (n - 1)
    s = problem.s0 + np.concatenate([[0.0], np.cumsum(0.5 * h * (v[:-1] + v[1:]))])
    return Trajectory(t=t, v=v.copy(), s=s, f_t=veh.mass * ut, f_b=veh.mass * ub)


def dp_oracle(problem: OcpProblem, v_grid: int = 161, t_grid: int = 121) -> Trajectory:
    """Backward dynamic program over a (time, speed) lattice.

    The running cost is separable in speed, so the terminal-position
    requirement is imposed through a linear distance price found by
    bisection; candidate paths are re-scored under the true objective
    (including both terminal penalties on the integrated position).
    """
    _feasibility_check(problem)
    if v_grid < 5 or t_grid < 5:
        raise ValueError("grids too small to be meaningful")
    veh = problem.vehicle
    nt = t_grid
    h = problem.duration / (nt - 1)
    v_mean = problem.distance / problem.duration
    grid = np.union1d(
        np.linspace(veh.v_min, veh.v_max, v_grid),
        np.array([problem.v0, problem.vf, v_mean]),
    )
    nv = grid.size
    i0 = int(np.searchsorted(grid, problem.v0))

    vi = grid[:, None]
    vj = grid[None, :]
    accel = (vj - vi) / h
    v_mid = 0.5 * (vi + vj)
    f_net = veh.mass * (accel + veh.c_r * veh.grav) + veh.drag_coef * v_mid**2
    feasible = (f_net <= veh.f_t_max + 1e-9) & (f_net >= veh.f_t_min - veh.f_b_max - 1e-9)
    f_b = np.maximum(0.0, veh.f_t_min - f_net)

    p_loss = veh.power_loss(grid)
    run = h * (
        problem.w_power * 0.5 * (p_loss[:, None] + p_loss[None, :])
        + problem.w_brake * f_b**2
    )
    run = np.where(feasible, run, np.inf)
    seg_dist = h * v_mid
    v_term = problem.w_term_v * (grid - problem.vf) ** 2

    def solve_for_price(beta: float):
        stage = run - beta * seg_dist
        choice = np.empty((nt - 1, nv), dtype=np.int32)
        value = v_term.copy()
        for k in range(nt - 2, -1, -1):
            total = stage + value[None, :]
            best = np.argmin(total, axis=1)
            choice[k] = best
            value = total[np.arange(nv), best]
        idx = np.empty(nt, dtype=np.int32)
        idx[0] = i0
        for k in range(nt - 1):
            idx[k + 1] = choice[k, idx[k]]
        v_path = grid[idx]
        s_path = problem.s0 + np.concatenate(
            [[0.0], np.cumsum(0.5 * h * (v_path[:-1] + v_path[1:]))]
        )
        return v_path, s_path, idx

    def build(v_path, s_path, idx):
        net = f_net[idx[:-1], idx[1:]]
        f_b_path = np.maximum(0.0, veh.f_t_min - net)
        f_t_path = net + f_b_path
        t = np.linspace(problem.t0, problem.tf, nt)
        traj = Trajectory(
            t=t,
            v=v_path,
            s=s_path,
            f_t=np.append(f_t_path, f_t_path[-1]),
            f_b=np.append(f_b_path, f_b_path[-1]),
        )
        traj.meta.update(cost=trajectory_cost(problem, traj), method="dp")
        return traj

    # Bracket the distance price; the traveled distance grows with beta.
    marginal = problem.w_power * (3.0 * veh.drag_coef * veh.v_max**2 + veh.roll_force)
    lo, hi = 0.0, 2.0 * marginal + 1.0
    candidates = []
    path_lo = solve_for_price(lo)
    candidates.append(path_lo)
    if path_lo[1][-1] < problem.sf:
        for _ in range(12):
            path_hi = solve_for_price(hi)
            candidates.append(path_hi)
            if path_hi[1][-1] >= problem.sf:
                break
            hi *= 4.0
        else:
            raise GridTooCoarseError("no distance price reaches the target position")
        for _ in range(50):
            mid = 0.5 * (lo + hi)
            path_mid = solve_for_price(mid)
            candidates.append(path_mid)
            if path_mid[1][-1] < problem.sf:
                lo = mid
            else:
                hi = mid

    best = min(candidates, key=lambda c: trajectory_cost(problem, build(*c)))
    traj = build(*best)
    miss = abs(traj.s[-1] - problem.sf)
    if miss > max(2.0, 0.02 * problem.distance):
        raise GridTooCoarseError(
            f"terminal position missed by {miss:.2f} m; refine the lattice"
        )
    traj.meta["terminal_miss"] = miss
    return traj


def generate_case_trajectory(
    case: Case,
    schedule: SignalSchedule,
    vehicle: VehicleParams,
    v0: float,
    terminal_speed: float = 10.0,
    margin: float = 1.0,
    fast_cruise: float = 18.0,
    stop_offset: float = 2.0,
    n_nodes: Optional[int] = None,
    t0: float = 0.0,
) -> Trajectory:
    """Boundary-value selection for the three study cases, then a solve.

    Slow pass: reach B just before this green ends.  Fast pass: reach B at
    the fast cruise speed, well inside the green.  Stop at red: arrive with
    zero speed exactly as the red begins, held just short of the stop line.
    Pass cases end at a low terminal speed for a safe crossing.
    """
    case = Case(case)
    if signal_phase(schedule, t0) is not Phase.GREEN:
        raise CaseInfeasibleError(f"departure at t={t0} falls in a red phase")
    g_end = green_end(schedule, t0)

    if case is Case.SLOW_PASS:
        tf, vf, sf = g_end - margin, terminal_speed, schedule.s_b
        if tf <= t0:
            raise CaseInfeasibleError(
                f"green ends at {g_end:.1f} s, leaving no horizon after the "
                f"{margin:.1f} s arrival margin"
            )
        if schedule.s_b / (tf - t0) > vehicle.v_max:
            raise CaseInfeasibleError(
                f"reaching B by {tf:.1f} s needs a mean speed above v_max={vehicle.v_max}"
            )
    elif case is Case.FAST_PASS:
        tf = t0 + schedule.s_b / fast_cruise
        vf, sf = terminal_speed, schedule.s_b
        if tf > g_end - margin:
            raise CaseInfeasibleError(
                f"crossing at {fast_cruise} m/s arrives at {tf:.1f} s, after the "
                f"green window ending at {g_end:.1f} s minus the {margin:.1f} s margin"
            )
    else:  # STOP_AT_RED
        tf, vf, sf = g_end, 0.0, schedule.s_b - stop_offset
        if vehicle.v_min > 0:
            raise CaseInfeasibleError("stopping requires v_min = 0")

    problem = OcpProblem(t0=t0, tf=tf, v0=v0, vf=vf, s0=0.0, sf=sf, vehicle=vehicle)
    traj = solve_ocp(problem, n_nodes=n_nodes)
    traj.meta.update(case=case.value, green_end=g_end)
    return traj
