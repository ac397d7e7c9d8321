"""Energy and Lyapunov functions paired with the concrete models.

Each energy function carries its gradient and, where the model splits
state into angles and speeds, a kinetic/potential decomposition.  The
multi-machine variant implements the classical kinetic + path-dependent
potential form; its transfer-conductance ratio term has a removable
singularity on the diagonal ``theta_ij == theta_ij_s`` that is replaced by
its analytic limit inside a small guard band.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import ndimage

#: Half-width of the guard band around the ratio-term singularity.
RATIO_GUARD = 1e-8


@dataclass(frozen=True)
class EnergyFunction:
    """Scalar function V with gradient and optional kinetic/potential split.

    ``value`` and ``potential`` broadcast over leading axes; ``gradient``
    takes a single state.  ``potential`` acts on the angle subvector and
    ``kinetic`` on the speed subvector; both are None when the model has no
    such split (the whole state is then treated as angles and ``value`` is
    all potential).
    """

    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    potential: Callable[[np.ndarray], np.ndarray] | None = None
    kinetic: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = ""

    def check_gradient(self, x: np.ndarray, rel_tol: float = 1e-5) -> float:
        """Max relative deviation of the analytic gradient from central differences."""
        x = np.asarray(x, dtype=float)
        g = self.gradient(x)
        gfd = np.zeros_like(g)
        for j in range(x.size):
            step = 1e-6 * max(1.0, abs(x[j]))
            e = np.zeros(x.size)
            e[j] = step
            gfd[j] = (self.value(x + e) - self.value(x - e)) / (2 * step)
        scale = max(1.0, float(np.abs(g).max()))
        dev = float(np.abs(g - gfd).max() / scale)
        if dev > rel_tol:
            raise AssertionError(f"gradient mismatch: relative deviation {dev:.3e}")
        return dev


# --- three-machine energy ---------------------------------------------------

def energy_3machine(x: np.ndarray) -> np.ndarray:
    """Energy of the reduced three-machine system (zero at the stable point)."""
    x = np.asarray(x, dtype=float)
    x1 = x[..., 0]
    x2 = x[..., 1]
    return (
        4.0035
        - 2 * np.cos(x1)
        - np.cos(x2)
        - np.cos(x1 - x2)
        - 0.02 * x1
        - 0.1 * x2
    )


def energy_3machine_gradient(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    x1 = x[..., 0]
    x2 = x[..., 1]
    return np.stack(
        [
            2 * np.sin(x1) + np.sin(x1 - x2) - 0.02,
            np.sin(x2) - np.sin(x1 - x2) - 0.1,
        ],
        axis=-1,
    )


def energy_3machine_function() -> EnergyFunction:
    return EnergyFunction(
        value=energy_3machine,
        gradient=energy_3machine_gradient,
        potential=energy_3machine,
        kinetic=None,
        name="three-machine-energy",
    )


# --- quadratic Lyapunov function for the 3-D benchmark ----------------------

def lyapunov_3d(x: np.ndarray, x_s: np.ndarray) -> np.ndarray:
    """Squared Euclidean distance to the stable equilibrium."""
    d = np.asarray(x, dtype=float) - np.asarray(x_s, dtype=float)
    return np.sum(d * d, axis=-1)


def lyapunov_3d_function(x_s: np.ndarray) -> EnergyFunction:
    x_s = np.asarray(x_s, dtype=float)
    return EnergyFunction(
        value=lambda x: lyapunov_3d(x, x_s),
        gradient=lambda x: 2 * (np.asarray(x, dtype=float) - x_s),
        potential=lambda x: lyapunov_3d(x, x_s),
        kinetic=None,
        name="benchmark-3d-lyapunov",
    )


# --- SMIB energy -------------------------------------------------------------

def smib_energy_function(params, delta_s: float) -> EnergyFunction:
    """Kinetic plus well potential for the single-machine system."""
    M = params.M
    P_m = params.P_m
    P_max = params.P_max
    cos_s = math.cos(delta_s)

    def potential(theta):
        theta = np.asarray(theta, dtype=float)
        d = theta[..., 0]
        return -P_m * (d - delta_s) - P_max * (np.cos(d) - cos_s)

    def kinetic(speeds):
        speeds = np.asarray(speeds, dtype=float)
        return 0.5 * M * speeds[..., 0] ** 2

    def value(state):
        state = np.asarray(state, dtype=float)
        return kinetic(state[..., 1:]) + potential(state[..., :1])

    def gradient(state):
        d, w = float(state[0]), float(state[1])
        return np.array([-P_m + P_max * math.sin(d), M * w])

    return EnergyFunction(value, gradient, potential, kinetic, "smib-energy")


# --- multi-machine energy -----------------------------------------------------

def _pairwise(theta: np.ndarray) -> np.ndarray:
    return theta[..., :, None] - theta[..., None, :]


def multimachine_potential(theta: np.ndarray, model) -> np.ndarray:
    """Potential part of the classical multi-machine energy function.

    ``model`` supplies n, P (net injections), E, B, G and the post-fault
    stable angles theta_s.  Broadcasts over leading axes of ``theta``.
    """
    theta = np.asarray(theta, dtype=float)
    th_s = model.theta_s
    EE = np.outer(model.E, model.E)
    mask = np.triu(np.ones((model.n, model.n), dtype=bool), k=1)

    d_ij = _pairwise(theta)
    s_ij = _pairwise(th_s)
    pos = -np.sum(model.P * (theta - th_s), axis=-1)
    cos_term = EE * model.B * (np.cos(d_ij) - np.cos(s_ij))
    pos -= np.sum(np.where(mask, cos_term, 0.0), axis=(-2, -1))

    if not model.lossless:
        u = (theta[..., :, None] + theta[..., None, :]) - (th_s[:, None] + th_s[None, :])
        w = d_ij - s_ij
        sin_diff = np.sin(d_ij) - np.sin(s_ij)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(np.abs(w) < RATIO_GUARD, 0.0, u / np.where(w == 0, 1.0, w))
        exact = ratio * sin_diff
        # removable singularity: first-order expansion around theta_ij == theta_ij_s
        limit = u * np.cos(s_ij) - 0.5 * u * w * np.sin(s_ij)
        g_term = EE * model.G * np.where(np.abs(w) < RATIO_GUARD, limit, exact)
        pos += np.sum(np.where(mask, g_term, 0.0), axis=(-2, -1))
    return pos


def multimachine_potential_gradient(theta: np.ndarray, model) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    th_s = model.theta_s
    EE = np.outer(model.E, model.E)
    d_ij = _pairwise(theta)
    s_ij = _pairwise(th_s)

    # i == j entries contribute nothing: sin(0) = 0 on the diagonal
    grad = -model.P + np.sum(EE * model.B * np.sin(d_ij), axis=-1)

    if not model.lossless:
        u = (theta[:, None] + theta[None, :]) - (th_s[:, None] + th_s[None, :])
        w = d_ij - s_ij
        sin_diff = np.sin(d_ij) - np.sin(s_ij)
        cos_d = np.cos(d_ij)
        cos_s = np.cos(s_ij)
        sin_s = np.sin(s_ij)
        small = np.abs(w) < RATIO_GUARD
        w_safe = np.where(small, 1.0, w)
        # d/dtheta_k of the (k, j) pair term, exact branch:
        #   dR/dtheta_k * sin_diff + R * cos(theta_kj), R = u / w
        exact = ((w - u) / w_safe**2) * sin_diff + (u / w_safe) * cos_d
        # guarded branch from the series u cos_s - (u w / 2) sin_s
        limit = cos_s - 0.5 * (w + u) * sin_s
        dpair = np.where(small, limit, exact)
        np.fill_diagonal(dpair, 0.0)
        grad += np.sum(EE * model.G * dpair, axis=-1)
    return grad


def multimachine_energy_function(model) -> EnergyFunction:
    """Classical energy function for a reduced machine model (lossless or lossy)."""
    n = model.n
    M = model.M

    def kinetic(speeds):
        speeds = np.asarray(speeds, dtype=float)
        return 0.5 * np.sum(M * speeds**2, axis=-1)

    def potential(theta):
        return multimachine_potential(theta, model)

    def value(state):
        state = np.asarray(state, dtype=float)
        return kinetic(state[..., n:]) + potential(state[..., :n])

    def gradient(state):
        state = np.asarray(state, dtype=float)
        return np.concatenate(
            [multimachine_potential_gradient(state[:n], model), M * state[n:]]
        )

    name = "multimachine-energy-" + ("lossless" if model.lossless else "lossy")
    return EnergyFunction(value, gradient, potential, kinetic, name)


# --- sublevel sets -----------------------------------------------------------

@dataclass
class LevelSet:
    """Connected component of a sublevel set {V < l} containing a seed state.

    Membership is decided on an evaluation grid (2-D or 3-D) by flood fill;
    for higher dimensions use :func:`descent_membership` instead.
    """

    energy: EnergyFunction
    level: float
    component_seed: np.ndarray
    bounds: tuple[tuple[float, float], ...]
    resolution: int = 200

    def __post_init__(self):
        self.component_seed = np.asarray(self.component_seed, dtype=float)
        ndim = len(self.bounds)
        if ndim not in (2, 3):
            raise ValueError("grid membership supports 2-D and 3-D only")
        seed_v = float(self.energy.value(self.component_seed))
        if seed_v >= self.level:
            raise ValueError(
                f"seed value {seed_v:.6f} is not below the level {self.level:.6f}"
            )
        axes = [np.linspace(lo, hi, self.resolution) for lo, hi in self.bounds]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack(mesh, axis=-1)
        self._axes = axes
        self._inside = self.energy.value(pts) < self.level
        self._labels, _ = ndimage.label(self._inside)
        self._seed_label = self._labels[self._cell(self.component_seed)]
        if self._seed_label == 0:
            raise ValueError("seed cell not inside the sublevel set on this grid")

    def _cell(self, x: np.ndarray) -> tuple[int, ...]:
        idx = []
        for axis, xi in zip(self._axes, np.asarray(x, dtype=float)):
            if xi < axis[0] or xi > axis[-1]:
                raise ValueError("state outside the membership grid")
            idx.append(int(np.clip(np.searchsorted(axis, xi), 0, len(axis) - 1)))
        return tuple(idx)

    def membership(self, x: np.ndarray) -> bool:
        """True when V(x) < l and x lies in the seed's connected component."""
        x = np.asarray(x, dtype=float)
        if not float(self.energy.value(x)) < self.level:
            return False
        return bool(self._labels[self._cell(x)] == self._seed_label)

    def component_mask(self) -> np.ndarray:
        return self._labels == self._seed_label

    def boundary_cells(self) -> np.ndarray:
        """Grid states of component cells adjacent to the outside."""
        mask = self.component_mask()
        eroded = ndimage.binary_erosion(mask)
        rim = mask & ~eroded
        idx = np.argwhere(rim)
        coords = np.stack(
            [self._axes[d][idx[:, d]] for d in range(len(self._axes))], axis=-1
        )
        return coords


def descent_membership(study, x: np.ndarray, level: float, horizon: float = 100.0,
                       ball: float = 0.05) -> bool:
    """Sublevel-component membership by trajectory descent (any dimension).

    Follows the model flow from x; membership holds when the trajectory
    reaches the stable point while the energy never exceeds the level.
    """
    from .dynamics import IntegratorControls, integrate

    x = np.asarray(x, dtype=float)
    if not float(study.energy.value(x)) < level:
        return False
    reached = [False]
    stayed_under = [True]

    def done(t, state):
        if float(study.energy.value(state)) >= level:
            stayed_under[0] = False
            return True
        if np.linalg.norm(state - study.sep) < ball:
            reached[0] = True
            return True
        return False

    integrate(study.system, x, horizon, IntegratorControls(), terminal=done)
    return reached[0] and stayed_under[0]
