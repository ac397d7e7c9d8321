"""Concrete dynamical systems used throughout the toolkit.

Three analytic models live here: the reduced three-machine system, a
3-dimensional polynomial benchmark, and a single-machine-infinite-bus
(SMIB) system whose critical clearing quantities have closed forms (the
equal-area construction), making it the analytic oracle for the fault
pipeline.  The multi-machine swing model built from network data is in
:mod:`stabex.network`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dynamics import IntegratorControls, SystemModel, integrate
from .energy import EnergyFunction, energy_3machine_function, smib_energy_function
from .equilibria import newton_refine


@dataclass(frozen=True)
class StudySystem:
    """A model paired with its energy function and angle bookkeeping.

    ``sep`` is the asymptotically stable equilibrium the study targets.
    ``gradient_system`` is the reduced angle-space dynamics used by the
    controlling-UEP machinery (for first-order models it is the system
    itself).  ``spread``, when present, maps a state to the maximum pairwise
    angle separation (the instability monitor for swing models).
    ``verdict_hook(x_clear, horizon)`` may shortcut the stability verdict
    with a model-specific exact criterion; it returns "stable", "unstable"
    or None to fall back to simulation.
    """

    system: SystemModel
    energy: EnergyFunction
    n_angles: int
    sep: np.ndarray
    gradient_system: SystemModel
    spread: Callable[[np.ndarray], float] | None = None
    verdict_hook: Callable[[np.ndarray, float], str | None] | None = None
    name: str = ""

    def angles(self, state: np.ndarray) -> np.ndarray:
        return np.asarray(state)[..., : self.n_angles]

    def lift(self, theta: np.ndarray) -> np.ndarray:
        """Embed an angle vector into the full state with zero speeds."""
        theta = np.asarray(theta, dtype=float)
        out = np.zeros(theta.shape[:-1] + (self.system.dimension,))
        out[..., : self.n_angles] = theta
        return out


@dataclass(frozen=True)
class FaultScenario:
    """Pre-fault / fault-on / post-fault model triple for one fault.

    ``x0_pre`` is the pre-fault equilibrium the fault-on trajectory starts
    from; construction checks it really is one.
    """

    pre: StudySystem
    fault_on: StudySystem
    post: StudySystem
    x0_pre: np.ndarray
    faulted_bus: int | str | None = None

    def __post_init__(self):
        res = float(np.linalg.norm(self.pre.system.field(self.x0_pre)))
        if res >= 1e-10:
            raise ValueError(f"x0_pre is not a pre-fault equilibrium (residual {res:.2e})")


# --- reduced three-machine system -----------------------------------------

def three_machine_field(x: np.ndarray) -> np.ndarray:
    """Reduced three-machine swing field on the two relative angles."""
    x = np.asarray(x, dtype=float)
    x1 = x[..., 0]
    x2 = x[..., 1]
    return np.stack(
        [
            -np.sin(x1) - 0.5 * np.sin(x1 - x2) + 0.01,
            -0.5 * np.sin(x2) - 0.5 * np.sin(x2 - x1) + 0.05,
        ],
        axis=-1,
    )


def three_machine_jacobian(x: np.ndarray) -> np.ndarray:
    x1, x2 = float(x[0]), float(x[1])
    c12 = math.cos(x1 - x2)
    return np.array(
        [
            [-math.cos(x1) - 0.5 * c12, 0.5 * c12],
            [0.5 * c12, -0.5 * math.cos(x2) - 0.5 * c12],
        ]
    )


THREE_MACHINE = SystemModel(2, three_machine_field, three_machine_jacobian, "three-machine")

#: Area of interest for the three-machine system (one period per axis).
THREE_MACHINE_BOX = ((-2 * math.pi, 2 * math.pi), (-2 * math.pi, 2 * math.pi))


def three_machine_study() -> StudySystem:
    """Three-machine system bundled with its energy function.

    The system is first order (pure angle dynamics), so the gradient system
    is the system itself, the whole state is the angle vector and the
    energy has no kinetic part.
    """
    sep = newton_refine(THREE_MACHINE, np.zeros(2))
    return StudySystem(
        system=THREE_MACHINE,
        energy=energy_3machine_function(),
        n_angles=2,
        sep=sep,
        gradient_system=THREE_MACHINE,
        name="three-machine",
    )


def three_machine_ray_scenario(
    target: np.ndarray, speed: float = 1.0
) -> FaultScenario:
    """Synthetic fault for the three-machine system: a constant-velocity ray.

    The "fault-on" dynamics drive the state from the stable equilibrium
    straight toward ``target`` at the given speed, which is how a fault
    direction is exercised on a model with no network to ground.
    """
    study = three_machine_study()
    direction = np.asarray(target, dtype=float) - study.sep
    v = speed * direction / np.linalg.norm(direction)

    def ray_field(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(v, x.shape).copy()

    def ray_jacobian(x):
        return np.zeros((2, 2))

    ray = SystemModel(2, ray_field, ray_jacobian, "three-machine-fault-ray")
    fault_on = StudySystem(
        system=ray,
        energy=study.energy,
        n_angles=2,
        sep=study.sep,
        gradient_system=ray,
        name="three-machine-fault-ray",
    )
    return FaultScenario(pre=study, fault_on=fault_on, post=study, x0_pre=study.sep)


# --- 3-dimensional polynomial benchmark ------------------------------------

def benchmark3d_field(x: np.ndarray) -> np.ndarray:
    """Cubic 3-D benchmark vector field."""
    x = np.asarray(x, dtype=float)
    u = x[..., 0]
    v = x[..., 1]
    w = x[..., 2]
    return np.stack(
        [
            u - u**3 + 0.5 * w + v**2,
            -v - v**3 + 0.5 * w**2 - u**2,
            u + 2 * v - w**3 + u**2 - v**2,
        ],
        axis=-1,
    )


def benchmark3d_jacobian(x: np.ndarray) -> np.ndarray:
    u, v, w = (float(c) for c in x)
    return np.array(
        [
            [1 - 3 * u**2, 2 * v, 0.5],
            [-2 * u, -1 - 3 * v**2, w],
            [1 + 2 * u, 2 - 2 * v, -3 * w**2],
        ]
    )


BENCHMARK_3D = SystemModel(3, benchmark3d_field, benchmark3d_jacobian, "benchmark-3d")

#: Stable equilibrium as printed in the source material (3-digit rounding;
#: Newton refinement moves it to (1.36211, -0.82910, 0.95531)).
BENCHMARK_3D_ASEP_SEED = np.array([1.367, -0.849, 0.936])


def benchmark3d_study() -> StudySystem:
    """3-D benchmark bundled with the quadratic Lyapunov function."""
    from .energy import lyapunov_3d_function

    sep = newton_refine(BENCHMARK_3D, BENCHMARK_3D_ASEP_SEED)
    return StudySystem(
        system=BENCHMARK_3D,
        energy=lyapunov_3d_function(sep),
        n_angles=3,
        sep=sep,
        gradient_system=BENCHMARK_3D,
        name="benchmark-3d",
    )


# --- single machine, infinite bus ------------------------------------------

@dataclass(frozen=True)
class SMIBParams:
    """Classical SMIB constants: inertia, mechanical power, peak transfer.

    ``damping`` defaults to a token positive value so the stable
    equilibrium is hyperbolic while the equal-area closed forms (derived
    for the undamped system) stay accurate to a fraction of a millisecond.
    """

    M: float = 0.0265
    P_m: float = 1.0
    P_max: float = 2.0
    damping: float = 1e-6

    def __post_init__(self):
        if not self.P_m < self.P_max:
            raise ValueError("requires P_m < P_max")

    @property
    def delta_s(self) -> float:
        return math.asin(self.P_m / self.P_max)

    @property
    def delta_u(self) -> float:
        return math.pi - self.delta_s


def smib_field(state: np.ndarray, params: SMIBParams) -> np.ndarray:
    """SMIB swing field; the fault-on variant passes P_max = 0."""
    state = np.asarray(state, dtype=float)
    delta = state[..., 0]
    omega = state[..., 1]
    acc = (params.P_m - params.P_max * np.sin(delta) - params.damping * omega) / params.M
    return np.stack([omega, acc], axis=-1)


def smib_critical_angle(params: SMIBParams) -> float:
    """Equal-area critical clearing angle for a bolted fault (P_e = 0)."""
    d0 = params.delta_s
    return math.acos((math.pi - 2 * d0) * math.sin(d0) - math.cos(d0))


def smib_critical_time(params: SMIBParams) -> float:
    """Closed-form critical clearing time from the constant-acceleration ride."""
    d0 = params.delta_s
    return math.sqrt(2 * params.M * (smib_critical_angle(params) - d0) / params.P_m)


def _smib_system(params: SMIBParams, p_max: float, name: str) -> SystemModel:
    def fld(state):
        state = np.asarray(state, dtype=float)
        delta = state[..., 0]
        omega = state[..., 1]
        acc = (params.P_m - p_max * np.sin(delta) - params.damping * omega) / params.M
        return np.stack([omega, acc], axis=-1)

    def jac(state):
        delta = float(state[0])
        return np.array(
            [[0.0, 1.0], [-p_max * math.cos(delta) / params.M, -params.damping / params.M]]
        )

    return SystemModel(2, fld, jac, name)


def smib_study(params: SMIBParams | None = None) -> StudySystem:
    """Post-fault SMIB bundle with the barrier-based verdict shortcut.

    For one degree of freedom the energy argument is exact: the total
    energy never increases, so a state strictly below the barrier energy of
    the bounding saddles can never leave the well and (with any positive
    damping) settles at the stable point.  The hook classifies on that
    basis, which keeps step-by-step verdicts consistent with the equal-area
    closed forms even at vanishing damping.
    """
    params = params or SMIBParams()
    d_s = params.delta_s
    d_u = params.delta_u
    system = _smib_system(params, params.P_max, "smib")
    energy = smib_energy_function(params, d_s)
    barrier = float(energy.value(np.array([d_u, 0.0])))
    sep = np.array([d_s, 0.0])

    def grad_field(theta):
        theta = np.asarray(theta, dtype=float)
        return params.P_m - params.P_max * np.sin(theta)

    def grad_jac(theta):
        return np.array([[-params.P_max * math.cos(float(theta[0]))]])

    gradient = SystemModel(1, grad_field, grad_jac, "smib-gradient")

    def spread(state):
        return float(abs(np.asarray(state)[..., 0] - d_s))

    def verdict_hook(x_clear: np.ndarray, horizon: float) -> str | None:
        x_clear = np.asarray(x_clear, dtype=float)
        v0 = float(energy.value(x_clear))
        if v0 < barrier - 1e-9:
            return "stable"
        outcome: list[str | None] = [None]

        def done(t, x):
            if not d_u - 2 * math.pi < x[0] < d_u:
                outcome[0] = "unstable"
                return True
            if float(energy.value(x)) < barrier - 1e-9:
                outcome[0] = "stable"
                return True
            return False

        if done(0.0, x_clear):
            return outcome[0]
        integrate(system, x_clear, horizon, IntegratorControls(), terminal=done)
        return outcome[0]

    return StudySystem(
        system=system,
        energy=energy,
        n_angles=1,
        sep=sep,
        gradient_system=gradient,
        spread=spread,
        verdict_hook=verdict_hook,
        name="smib",
    )


def smib_scenario(params: SMIBParams | None = None) -> FaultScenario:
    """Bolted three-phase fault at the machine terminal (P_e = 0 during fault)."""
    params = params or SMIBParams()
    post = smib_study(params)
    fault_system = _smib_system(params, 0.0, "smib-fault-on")
    fault_on = StudySystem(
        system=fault_system,
        energy=post.energy,
        n_angles=1,
        sep=post.sep,
        gradient_system=SystemModel(
            1,
            lambda th: np.full(np.asarray(th, dtype=float).shape, params.P_m),
            lambda th: np.zeros((1, 1)),
            "smib-fault-gradient",
        ),
        spread=post.spread,
        name="smib-fault-on",
    )
    return FaultScenario(pre=post, fault_on=fault_on, post=post, x0_pre=post.sep)
