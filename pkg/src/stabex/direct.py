"""Fault-on trajectories and the classical critical-value selectors.

PEBS takes the potential energy at the first local maximum along the
fault-on trajectory; BCU descends the reduced gradient system from that
exit point to a minimum gradient point (MGP), polishes it into the
controlling UEP by Newton on the full model, and falls back to a
shadowing restart when Newton wanders.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .dynamics import IntegratorControls, Trajectory, integrate
from .equilibria import EquilibriumPoint, classify, newton_refine, on_stability_boundary
from .errors import (
    BCUFailureError,
    CUEPNotLocatedError,
    DivergenceError,
    NewtonDivergenceError,
    NonHyperbolicError,
    PEBSNotFoundError,
)
from .models import FaultScenario, StudySystem

#: Newton polish is accepted only within this angle-space radius of the MGP.
TRUST_RADIUS = 0.5
#: Shadowing restart budget.
MAX_SHADOWING_ROUNDS = 10
#: Gradient-flow horizon for the MGP search.
MGP_HORIZON = 50.0


@dataclass(frozen=True)
class CriticalValue:
    """Critical level value from one selector, with its witness point."""

    method: str  # pebs | bcu | closest-uep
    v_cr: float
    witness: np.ndarray
    time: float | None = None  # exit time along the fault-on trajectory
    wall_time: float = 0.0


@dataclass(frozen=True)
class ExitPoint:
    state: np.ndarray
    time: float
    v_cr: float


def fault_on_trajectory(
    scenario: FaultScenario,
    horizon: float = 2.0,
    controls: IntegratorControls | None = None,
) -> Trajectory:
    """High-accuracy fault-on trajectory from the pre-fault equilibrium.

    Divergence before the horizon yields the truncated trajectory with its
    ``truncated`` flag set rather than an exception.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    try:
        return integrate(scenario.fault_on.system, scenario.x0_pre, horizon, controls)
    except DivergenceError as exc:
        if exc.trajectory is None:
            raise
        return exc.trajectory


def _pe_rate(study: StudySystem, state: np.ndarray, velocity: np.ndarray) -> float:
    """d/dt of the potential energy along a trajectory point."""
    na = study.n_angles
    grad = study.energy.gradient(study.lift(study.angles(state)))[:na]
    return float(np.dot(grad, velocity[:na]))


def pebs_exit_point(
    traj: Trajectory,
    fault_system,
    study: StudySystem,
    refine_tol: float = 1e-6,
) -> ExitPoint:
    """First strict local maximum of potential energy along the trajectory.

    Located by the sign change of the potential-energy time derivative at
    the stored nodes, then bisected on the dense output to ``refine_tol``
    seconds.  ``fault_system`` supplies exact velocities at interpolated
    states; ``study`` supplies the post-fault energy the maximum is
    measured with.
    """
    rates = np.array(
        [_pe_rate(study, s, d) for s, d in zip(traj.states, traj.derivatives)]
    )
    armed = False
    bracket = None
    for k in range(len(rates)):
        if not armed:
            if rates[k] > 1e-12:
                armed = True
        elif rates[k] <= 0.0:
            bracket = (traj.times[k - 1], traj.times[k])
            break
    if bracket is None:
        raise PEBSNotFoundError(traj.t_end)

    def rate_at(t: float) -> float:
        state = traj.interpolate(t)
        return _pe_rate(study, state, fault_system.field(state))

    lo, hi = bracket
    while hi - lo > refine_tol:
        mid = 0.5 * (lo + hi)
        if rate_at(mid) > 0:
            lo = mid
        else:
            hi = mid
    t_star = 0.5 * (lo + hi)
    state = traj.interpolate(t_star)
    v_cr = float(study.energy.potential(study.angles(state)))
    return ExitPoint(state=state, time=t_star, v_cr=v_cr)


def _first_gradient_minimum(
    study: StudySystem, theta0: np.ndarray, t_min: float = 0.0
) -> tuple[np.ndarray, bool]:
    """Minimum gradient point of the reduced flow from theta0.

    Returns (theta, settled): ``settled`` means the flow ran into an
    equilibrium of the reduced system (gradient numerically zero) rather
    than through a strict local minimum of its norm.  Raises on no minimum
    within the horizon.
    """
    grad_sys = study.gradient_system
    hit: dict = {}

    def speed(th):
        return float(np.linalg.norm(grad_sys.field(th)))

    def done(t, th):
        if speed(th) < 1e-9:
            hit["settled"] = (t, th.copy())
            return True
        return False

    theta0 = np.asarray(theta0, dtype=float)
    if speed(theta0) < 1e-9:
        return theta0.copy(), True
    if t_min == 0.0:
        # d/dt ||f||^2 = 2 f^T J f along the flow; strictly positive at the
        # start means the start itself is the first local minimum (the exit
        # point already sits in the saddle zone, e.g. one degree of freedom)
        f0 = grad_sys.field(theta0)
        if float(f0 @ grad_sys.jacobian(theta0) @ f0) > 0.0:
            return theta0.copy(), False
    traj = integrate(grad_sys, theta0, MGP_HORIZON, IntegratorControls(), terminal=done)

    # interior minima take precedence: even a flow that eventually settles
    # at an attractor may first skim past the controlling saddle
    speeds = np.array([np.linalg.norm(d) for d in traj.derivatives])
    k0 = int(np.searchsorted(traj.times, t_min))
    for k in range(max(1, k0), len(speeds) - 1):
        if speeds[k] <= speeds[k - 1] and speeds[k] < speeds[k + 1]:
            lo, hi = traj.times[k - 1], traj.times[k + 1]
            for _ in range(60):
                m1 = lo + (hi - lo) / 3
                m2 = hi - (hi - lo) / 3
                if speed(traj.interpolate(m1)) < speed(traj.interpolate(m2)):
                    hi = m2
                else:
                    lo = m1
                if hi - lo < 1e-8:
                    break
            return traj.interpolate(0.5 * (lo + hi)), False
    if "settled" in hit:
        return hit["settled"][1], True
    raise BCUFailureError()


def _gradient_basin(study: StudySystem, theta: np.ndarray, horizon: float = MGP_HORIZON) -> str:
    """Which attractor the reduced flow settles at: "target" or "other"."""
    grad_sys = study.gradient_system
    theta_s = study.angles(study.sep)

    def done(t, th):
        return np.linalg.norm(grad_sys.field(th)) < 1e-9 or \
            np.linalg.norm(th - theta_s) < 1e-3

    try:
        traj = integrate(grad_sys, theta, horizon, IntegratorControls(), terminal=done)
    except DivergenceError:
        return "other"
    end = traj.final_state
    return "target" if np.linalg.norm(end - theta_s) < 0.05 else "other"


def _exit_refined_start(
    scenario: FaultScenario, traj: Trajectory, t_guess: float
) -> np.ndarray:
    """Angle start on the reduced-system basin boundary along the fault-on path.

    Bisects the fault-on trajectory for the time where the reduced flow
    stops settling home; the flow from just past that time shadows the
    stable manifold of the controlling saddle and produces a clean minimum
    gradient point.
    """
    post = scenario.post
    grad_sys = post.gradient_system

    def basin_at(t: float) -> str:
        th = post.angles(traj.interpolate(t))
        if grad_sys.project is not None:
            th = grad_sys.project(th)
        return _gradient_basin(post, th)

    lo, hi = 0.0, None
    t = max(t_guess, 1e-3)
    while t <= traj.t_end:
        if basin_at(t) == "other":
            hi = t
            break
        lo = t
        t = t * 1.3 + 0.02
    if hi is None:
        raise BCUFailureError("BCU failure: trajectory stays interior")
    for _ in range(40):
        if hi - lo < 1e-5:
            break
        mid = 0.5 * (lo + hi)
        if basin_at(mid) == "target":
            lo = mid
        else:
            hi = mid
    th = post.angles(traj.interpolate(hi))
    if grad_sys.project is not None:
        th = grad_sys.project(th)
    return th


def bcu_cuep(
    scenario: FaultScenario,
    exit_point: np.ndarray,
    exit_time: float | None = None,
    traj: Trajectory | None = None,
    check_boundary: bool = True,
) -> EquilibriumPoint:
    """Controlling UEP via gradient-system descent with shadowing retries.

    Projects the exit point to angle space, rides the reduced system to the
    first minimum gradient point, polishes with Newton on the full model,
    and restarts along the reduced flow when Newton diverges or leaves the
    trust radius.  When the descent produces no usable minimum (it can roll
    straight into a neighbouring valley), the exit point is refined by
    bisecting the fault-on trajectory for the reduced-system basin boundary
    and the descent is retried from there.
    """
    post = scenario.post
    theta = np.asarray(post.angles(exit_point), dtype=float)
    grad_sys = post.gradient_system
    if grad_sys.project is not None:
        theta = grad_sys.project(theta)

    theta_s = post.angles(post.sep)
    refined = False
    t_min = 0.0
    for _round in range(MAX_SHADOWING_ROUNDS + 1):
        try:
            theta_mgp, settled = _first_gradient_minimum(post, theta, t_min)
        except BCUFailureError:
            theta_mgp, settled = None, True

        restart = None
        need_refine = False
        if theta_mgp is None:
            need_refine = True
        elif settled and np.linalg.norm(theta_mgp - theta_s) < 0.05:
            need_refine = True  # rolled home: the exit estimate was interior
        else:
            try:
                state = newton_refine(post.system, post.lift(theta_mgp))
                drift = float(np.max(np.abs(post.angles(state) - theta_mgp)))
                if drift <= TRUST_RADIUS:
                    try:
                        ep = classify(post.system, state, energy=post.energy)
                    except NonHyperbolicError:
                        raise CUEPNotLocatedError(_round) from None
                    if ep.type_k >= 1:
                        if check_boundary:
                            asep = classify(post.system, post.sep, energy=post.energy)
                            status = on_stability_boundary(post, ep, asep)
                            ep = replace(ep, on_boundary=status)
                        return ep
                if settled:
                    need_refine = True  # settled at a neighbouring stable point
                else:
                    restart = post.angles(state)
            except NewtonDivergenceError as exc:
                if settled:
                    need_refine = True
                else:
                    restart = post.angles(exc.best_state)

        if need_refine:
            if refined:
                raise CUEPNotLocatedError(_round)
            refined = True
            if traj is None:
                traj = fault_on_trajectory(scenario, max(2.0, (exit_time or 1.0) * 1.5))
            theta = _exit_refined_start(scenario, traj, exit_time or 0.5)
            t_min = 0.0
        else:
            theta = np.asarray(restart, dtype=float)
            if grad_sys.project is not None:
                theta = grad_sys.project(theta)
            t_min = 0.05
    raise CUEPNotLocatedError(MAX_SHADOWING_ROUNDS)


def real_exit_point(scenario: FaultScenario, sbs_cct: float) -> np.ndarray:
    """Fault-on state at the true critical clearing time (a boundary point)."""
    if sbs_cct <= 0:
        raise ValueError("the critical clearing time must be positive")
    return integrate(scenario.fault_on.system, scenario.x0_pre, sbs_cct).final_state


def pebs_critical_value(
    scenario: FaultScenario, traj: Trajectory | None = None, horizon: float = 2.0
) -> CriticalValue:
    """PEBS selector: potential energy at the exit point."""
    t0 = time.perf_counter()
    if traj is None:
        traj = fault_on_trajectory(scenario, horizon)
    exit_pt = pebs_exit_point(traj, scenario.fault_on.system, scenario.post)
    return CriticalValue(
        method="pebs",
        v_cr=exit_pt.v_cr,
        witness=exit_pt.state,
        time=exit_pt.time,
        wall_time=time.perf_counter() - t0,
    )


def bcu_critical_value(
    scenario: FaultScenario,
    traj: Trajectory | None = None,
    horizon: float = 2.0,
    check_boundary: bool = True,
) -> CriticalValue:
    """BCU selector: total energy at the controlling UEP."""
    t0 = time.perf_counter()
    if traj is None:
        traj = fault_on_trajectory(scenario, horizon)
    exit_pt = pebs_exit_point(traj, scenario.fault_on.system, scenario.post)
    cuep = bcu_cuep(
        scenario, exit_pt.state, exit_time=exit_pt.time, traj=traj,
        check_boundary=check_boundary,
    )
    return CriticalValue(
        method="bcu",
        v_cr=float(cuep.energy),
        witness=cuep.state,
        time=exit_pt.time,
        wall_time=time.perf_counter() - t0,
    )
