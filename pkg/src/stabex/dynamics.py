"""Vector fields, explicit Runge-Kutta one-step maps and a reference integrator.

The one-step maps are the workhorse of the expansion machinery; the
reference integrator is a Dormand-Prince 5(4) embedded pair with PI step
control and cubic-Hermite dense output, used wherever a trajectory must be
far more accurate than the maps it judges (step-by-step oracles, fault-on
trajectories, boundary shooting).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DivergenceError, NumericalBlowUpError, StiffTrajectoryError


@dataclass(frozen=True)
class SystemModel:
    """Autonomous vector field x' = f(x) with analytic Jacobian.

    ``field`` must broadcast over leading axes: input shape (..., n) maps to
    output shape (..., n).  ``jacobian`` takes a single state (n,) and
    returns (n, n).

    ``project``, when present, maps a state onto the model's invariant
    manifold (e.g. center-of-inertia re-centering); ``spectrum_basis`` is an
    orthonormal (n, m) basis of the dynamically invariant subspace on which
    equilibrium spectra are meaningful.  Both default to None for models
    without structural symmetries.
    """

    dimension: int
    field: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    name: str = ""
    project: Callable[[np.ndarray], np.ndarray] | None = None
    spectrum_basis: np.ndarray | None = None


@dataclass(frozen=True)
class RKScheme:
    """Butcher tableau of an explicit s-stage Runge-Kutta one-step map.

    ``a[i]`` holds the strictly lower-triangular row for stage i+1
    (i = 0..s-2); ``b`` the quadrature weights.
    """

    name: str
    a: tuple[tuple[float, ...], ...]
    b: tuple[float, ...]

    def __post_init__(self):
        s = len(self.b)
        if s < 1:
            raise ValueError("scheme needs at least one stage")
        if len(self.a) != s - 1 or any(len(row) != i + 1 for i, row in enumerate(self.a)):
            raise ValueError("tableau rows must be strictly lower triangular")
        if abs(sum(self.b) - 1.0) > 1e-12:
            raise ValueError("inconsistent tableau: sum(b) != 1")

    @property
    def stages(self) -> int:
        return len(self.b)


#: Forward Euler, x + h f(x).
EULER = RKScheme("euler", (), (1.0,))

#: Improved Euler (Heun), x + h/2 (f(x) + f(x + h f(x))).
IMPROVED_EULER = RKScheme("rk2", ((1.0,),), (0.5, 0.5))

#: Kutta's three-stage third-order map,
#: x + h/6 k1 + 2h/3 k2 + h/6 k3 with k2 = f(x + h/2 k1), k3 = f(x - h k1 + 2h k2).
RK3 = RKScheme("rk3", ((0.5,), (-1.0, 2.0)), (1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0))

SCHEMES = {s.name: s for s in (EULER, IMPROVED_EULER, RK3)}


def rk_step(model: SystemModel, scheme: RKScheme, x: np.ndarray, h: float) -> np.ndarray:
    """One explicit Runge-Kutta step of size h (negative h steps in reverse time).

    Broadcasts over leading axes of ``x``.  Exact equilibria are exact fixed
    points: every stage evaluates to zero and ``x + h*0 == x`` bitwise.
    """
    x = np.asarray(x, dtype=float)
    k = []
    for i in range(scheme.stages):
        xi = x
        if i > 0:
            incr = sum(aij * kj for aij, kj in zip(scheme.a[i - 1], k))
            xi = x + h * incr
        ki = model.field(xi)
        if not np.all(np.isfinite(ki)):
            raise NumericalBlowUpError(stage=i)
        k.append(ki)
    incr = sum(bi * ki for bi, ki in zip(scheme.b, k))
    return x + h * incr


@dataclass(frozen=True)
class Trajectory:
    """Dense-output trajectory: nodes plus stored derivatives.

    ``interpolate`` is piecewise cubic Hermite on the stored (state,
    derivative) pairs and reproduces the nodes exactly.  ``direction`` is -1
    when the trajectory was produced by reverse-time integration, in which
    case ``times`` still holds non-negative elapsed times.
    """

    times: np.ndarray
    states: np.ndarray
    derivatives: np.ndarray
    direction: int = 1
    truncated: bool = field(default=False)

    def __post_init__(self):
        if len(self.times) != len(self.states) or len(self.times) != len(self.derivatives):
            raise ValueError("times/states/derivatives length mismatch")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def interpolate(self, t: float) -> np.ndarray:
        """State at time t in [times[0], times[-1]] (exact at the nodes)."""
        times = self.times
        if t < times[0] or t > times[-1]:
            raise ValueError(f"t={t} outside [{times[0]}, {times[-1]}]")
        j = int(np.searchsorted(times, t))
        if j < len(times) and times[j] == t:
            return self.states[j].copy()
        j -= 1
        dt = times[j + 1] - times[j]
        tau = (t - times[j]) / dt
        h00 = (1 + 2 * tau) * (1 - tau) ** 2
        h10 = tau * (1 - tau) ** 2
        h01 = tau**2 * (3 - 2 * tau)
        h11 = tau**2 * (tau - 1)
        return (
            h00 * self.states[j]
            + h10 * dt * self.derivatives[j]
            + h01 * self.states[j + 1]
            + h11 * dt * self.derivatives[j + 1]
        )

    def sample(self, ts: Sequence[float]) -> np.ndarray:
        """Vectorized Hermite evaluation at many query times."""
        ts = np.asarray(ts, dtype=float)
        if ts.size == 0:
            return np.empty((0, self.states.shape[1]))
        if ts.min() < self.times[0] or ts.max() > self.times[-1]:
            raise ValueError("query times outside the trajectory span")
        j = np.clip(np.searchsorted(self.times, ts, side="right") - 1, 0,
                    len(self.times) - 2)
        dt = (self.times[j + 1] - self.times[j])[:, None]
        tau = ((ts - self.times[j]) / dt[:, 0])[:, None]
        h00 = (1 + 2 * tau) * (1 - tau) ** 2
        h10 = tau * (1 - tau) ** 2
        h01 = tau**2 * (3 - 2 * tau)
        h11 = tau**2 * (tau - 1)
        return (
            h00 * self.states[j]
            + h10 * dt * self.derivatives[j]
            + h01 * self.states[j + 1]
            + h11 * dt * self.derivatives[j + 1]
        )


@dataclass(frozen=True)
class IntegratorControls:
    """Tolerances and guards for the reference integrator."""

    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_step: float = math.inf
    min_step: float = 1e-12
    escape_radius: float = 1e6
    first_step: float | None = None


# Dormand-Prince 5(4) tableau; the 5th-order solution is propagated and the
# embedded 4th-order difference drives the error estimate.  FSAL: stage 7
# equals the next step's stage 1.
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_E = _DP_B5 - np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)


def integrate(
    model: SystemModel,
    x0: np.ndarray,
    t_end: float,
    controls: IntegratorControls | None = None,
    terminal: Callable[[float, np.ndarray], bool] | None = None,
) -> Trajectory:
    """Integrate x' = f(x) from x0 over [0, |t_end|] with dense output.

    Negative ``t_end`` integrates in reverse time by negating the field (one
    code path, matching reverse-flow semantics); the returned times are the
    non-negative elapsed times and ``direction`` records the sign.

    ``terminal(t, x)``, when given, is checked after every accepted step and
    stops the integration early (the trajectory ends at that node).
    """
    if t_end == 0:
        raise ValueError("t_end must be nonzero")
    ctl = controls or IntegratorControls()
    direction = 1 if t_end > 0 else -1
    span = abs(t_end)
    if direction > 0:
        fun = model.field
    else:
        base = model.field

        def fun(x):
            return -base(x)

    x = np.asarray(x0, dtype=float).copy()
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite initial state")
    t = 0.0
    f = fun(x)
    if not np.all(np.isfinite(f)):
        raise NumericalBlowUpError(stage=0)

    times = [0.0]
    states = [x.copy()]
    derivs = [f.copy()]

    scale0 = ctl.abs_tol + ctl.rel_tol * np.abs(x)
    d0 = np.linalg.norm(x / scale0) / math.sqrt(x.size)
    d1 = np.linalg.norm(f / scale0) / math.sqrt(x.size)
    h = ctl.first_step or (0.01 * d0 / d1 if d1 > 1e-12 else 1e-3)
    h = min(h, span, ctl.max_step)

    err_prev = 1.0
    order = 5.0
    while t < span:
        h = min(h, span - t, ctl.max_step)
        if h < ctl.min_step:
            raise StiffTrajectoryError(t=t, step=h)

        k = [f]
        blew_up = False
        for i in range(1, 7):
            xi = x + h * sum(a * kj for a, kj in zip(_DP_A[i], k))
            ki = fun(xi)
            if not np.all(np.isfinite(ki)):
                blew_up = True
                break
            k.append(ki)
        if blew_up:
            h *= 0.25
            continue
        x_new = x + h * sum(b * kj for b, kj in zip(_DP_B5[:6], k[:6]))
        err_vec = h * sum(e * kj for e, kj in zip(_DP_E, k))
        scale = ctl.abs_tol + ctl.rel_tol * np.maximum(np.abs(x), np.abs(x_new))
        err = np.linalg.norm(err_vec / scale) / math.sqrt(x.size)

        if err <= 1.0:
            t += h
            x = x_new
            f = k[6]  # FSAL
            times.append(t)
            states.append(x.copy())
            derivs.append(f.copy())
            norm = np.linalg.norm(x)
            if norm > ctl.escape_radius:
                traj = Trajectory(
                    np.array(times), np.array(states), np.array(derivs), direction, True
                )
                raise DivergenceError(t=t, norm=norm, trajectory=traj)
            if terminal is not None and terminal(t, x):
                break
            # PI controller (Gustafsson): blend current and previous error.
            fac = 0.9 * err ** (-0.7 / order) * err_prev ** (0.4 / order)
            err_prev = max(err, 1e-10)
        else:
            fac = 0.9 * err ** (-1.0 / order)
        h *= min(5.0, max(0.2, fac))

    return Trajectory(np.array(times), np.array(states), np.array(derivs), direction)


def iterate_map(
    model: SystemModel, scheme: RKScheme, x0: np.ndarray, h: float, n: int
) -> np.ndarray:
    """Apply the one-step map n times (broadcasts over leading axes)."""
    x = np.asarray(x0, dtype=float)
    for i in range(n):
        try:
            x = rk_step(model, scheme, x, h)
        except NumericalBlowUpError as exc:
            raise NumericalBlowUpError(stage=exc.stage, iteration=i) from None
    return x


def empirical_order(
    model: SystemModel,
    scheme: RKScheme,
    x0: np.ndarray,
    T: float,
    h_list: Sequence[float],
) -> float:
    """Least-squares slope of log(endpoint error) against log(h).

    The reference endpoint comes from the adaptive integrator at rel_tol
    1e-12; each h in ``h_list`` must divide T evenly so the fixed-step
    composition lands exactly on T.
    """
    if len(h_list) < 3:
        raise ValueError("h_list needs at least 3 entries")
    for h in h_list:
        n = T / h
        if abs(n - round(n)) > 1e-9:
            raise ValueError(f"h={h} does not divide T={T} evenly")
    ref = integrate(
        model, x0, T, IntegratorControls(rel_tol=1e-12, abs_tol=1e-14)
    ).final_state
    errs = []
    for h in h_list:
        end = iterate_map(model, scheme, x0, h, round(T / h))
        errs.append(np.linalg.norm(end - ref))
    slope = np.polyfit(np.log(np.asarray(h_list, dtype=float)), np.log(errs), 1)[0]
    return float(slope)


def check_jacobian(model: SystemModel, x: np.ndarray, rel_tol: float = 1e-5) -> float:
    """Max relative deviation between analytic and central-difference Jacobian."""
    x = np.asarray(x, dtype=float)
    J = model.jacobian(x)
    n = model.dimension
    Jfd = np.zeros((n, n))
    for j in range(n):
        step = 1e-6 * max(1.0, abs(x[j]))
        e = np.zeros(n)
        e[j] = step
        Jfd[:, j] = (model.field(x + e) - model.field(x - e)) / (2 * step)
    scale = max(1.0, float(np.abs(J).max()))
    dev = float(np.abs(J - Jfd).max() / scale)
    if dev > rel_tol:
        raise AssertionError(f"Jacobian mismatch: relative deviation {dev:.3e}")
    return dev
