"""Equilibrium location, classification and boundary-membership testing.

Newton runs use a least-squares step so models with structural null
directions (center-of-inertia symmetry) converge without special casing;
an optional model projection re-centers iterates on the invariant
manifold.  Spectra are restricted to ``model.spectrum_basis`` when present,
so the structural zero modes of such models never show up as spurious
non-hyperbolicity.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .dynamics import IntegratorControls, SystemModel, integrate
from .errors import (
    DivergenceError,
    NewtonDivergenceError,
    NoBoundaryUEPError,
    NonHyperbolicError,
    StabexError,
    StiffTrajectoryError,
)

logger = logging.getLogger(__name__)

#: Minimum |Re(lambda)| for an equilibrium to count as hyperbolic.
HYPERBOLICITY_MARGIN = 1e-8


@dataclass(frozen=True)
class EquilibriumPoint:
    """A located equilibrium with spectrum-based classification.

    ``kind`` is "asep" when no eigenvalue has positive real part, otherwise
    "uep"; ``type_k`` counts positive-real-part eigenvalues.
    ``on_boundary`` is "yes"/"no"/"unknown".
    """

    state: np.ndarray
    residual: float
    eigenvalues: np.ndarray
    kind: str
    type_k: int
    on_boundary: str = "unknown"
    energy: float | None = None

    @property
    def is_stable(self) -> bool:
        return self.kind == "asep"


def _restricted_eigenvalues(model: SystemModel, state: np.ndarray) -> np.ndarray:
    J = model.jacobian(state)
    Q = model.spectrum_basis
    if Q is not None:
        J = Q.T @ J @ Q
    return np.linalg.eigvals(J)


def classify(model: SystemModel, state: np.ndarray, energy=None) -> EquilibriumPoint:
    """Build an EquilibriumPoint, enforcing residual and hyperbolicity margins."""
    state = np.asarray(state, dtype=float)
    residual = float(np.linalg.norm(model.field(state)))
    if residual >= 1e-10:
        raise NewtonDivergenceError(state, residual, 0)
    eig = _restricted_eigenvalues(model, state)
    margin = float(np.min(np.abs(eig.real)))
    if margin < HYPERBOLICITY_MARGIN:
        raise NonHyperbolicError(state, margin)
    k = int(np.sum(eig.real > 0))
    return EquilibriumPoint(
        state=state,
        residual=residual,
        eigenvalues=eig,
        kind="asep" if k == 0 else "uep",
        type_k=k,
        energy=float(energy.value(state)) if energy is not None else None,
    )


def newton_refine(
    model: SystemModel,
    guess: np.ndarray,
    tol: float = 1e-12,
    max_iter: int = 100,
) -> np.ndarray:
    """Damped Newton (Armijo on the squared residual) to ||f|| < tol.

    Returns the refined state only; raises NewtonDivergenceError with the
    best iterate when the tolerance is not met.
    """
    x = np.asarray(guess, dtype=float).copy()
    if model.project is not None:
        x = model.project(x)
    best = x.copy()
    best_res = float(np.linalg.norm(model.field(x)))
    for _ in range(max_iter):
        f = model.field(x)
        res = float(np.linalg.norm(f))
        if res < best_res:
            best, best_res = x.copy(), res
        if res < tol:
            return x
        J = model.jacobian(x)
        p, *_ = np.linalg.lstsq(J, -f, rcond=None)
        if not np.all(np.isfinite(p)):
            break
        merit = 0.5 * res**2
        t = 1.0
        accepted = False
        while t > 2**-30:
            x_try = x + t * p
            if model.project is not None:
                x_try = model.project(x_try)
            f_try = model.field(x_try)
            if np.all(np.isfinite(f_try)) and 0.5 * float(
                np.dot(f_try, f_try)
            ) <= (1 - 1e-4 * t) * merit:
                x = x_try
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
    res = float(np.linalg.norm(model.field(x)))
    if res < tol:
        return x
    raise NewtonDivergenceError(best, best_res, max_iter)


def find_equilibrium(
    model: SystemModel,
    guess: np.ndarray,
    tol: float = 1e-12,
    energy=None,
) -> EquilibriumPoint:
    """Newton from the guess, then classify (residual, spectrum, kind)."""
    state = newton_refine(model, guess, tol=tol)
    return classify(model, state, energy=energy)


def enumerate_equilibria(
    model: SystemModel,
    bounds: Sequence[tuple[float, float]],
    grid_density: int,
    lift=None,
    energy=None,
    tol: float = 1e-12,
) -> list[EquilibriumPoint]:
    """Deduplicated equilibria from multistart Newton on a regular grid.

    ``bounds`` span the multistart coordinates; ``lift`` maps a grid point
    into a full model state (identity when None) -- power models multistart
    in angle space with zero speeds.  Results outside the bounds (in the
    lifted coordinates spanned by the grid) are dropped; duplicates closer
    than 1e-6 in the max norm are merged.
    """
    axes = [np.linspace(lo, hi, grid_density) for lo, hi in bounds]
    mesh = np.meshgrid(*axes, indexing="ij")
    starts = np.stack([m.ravel() for m in mesh], axis=-1)
    found: list[EquilibriumPoint] = []
    dropped = 0
    for start in starts:
        x0 = lift(start) if lift is not None else start
        try:
            ep = find_equilibrium(model, x0, tol=tol, energy=energy)
        except (NewtonDivergenceError, NonHyperbolicError):
            dropped += 1
            continue
        probe = ep.state[: len(bounds)]
        if any(
            not (lo - 1e-6 <= c <= hi + 1e-6)
            for c, (lo, hi) in zip(probe, bounds)
        ):
            continue
        if any(np.max(np.abs(ep.state - q.state)) <= 1e-6 for q in found):
            continue
        found.append(ep)
    if dropped:
        logger.debug("enumerate_equilibria: %d non-converged starts dropped", dropped)
    found.sort(key=lambda ep: tuple(ep.state))
    return found


def _converges_to(study_or_model, state, target, horizon, ball=0.05, dwell=2.0):
    """Forward simulation: does the trajectory settle at ``target``?

    Returns "yes", "no" or "unknown".  Accepts a bare SystemModel or a
    bundle exposing .system / .verdict_hook.
    """
    model = getattr(study_or_model, "system", study_or_model)
    hook = getattr(study_or_model, "verdict_hook", None)
    if hook is not None:
        out = hook(np.asarray(state, dtype=float), horizon)
        if out == "stable":
            return "yes"
        if out == "unstable":
            return "no"
        return "unknown"

    entered = [None]
    outcome = [None]

    def done(t, x):
        if np.linalg.norm(x - target) < ball:
            if entered[0] is None:
                entered[0] = t
            elif t - entered[0] >= dwell:
                outcome[0] = "yes"
                return True
        else:
            entered[0] = None
            # settled at some other attractor: field numerically zero
            if t > 0 and np.linalg.norm(model.field(x)) < 1e-9:
                outcome[0] = "no"
                return True
        return False

    try:
        integrate(model, state, horizon, IntegratorControls(), terminal=done)
    except DivergenceError:
        return "no"
    except (StiffTrajectoryError, StabexError):
        return "unknown"
    return outcome[0] or "no"


def on_stability_boundary(
    study_or_model,
    uep: EquilibriumPoint,
    asep: EquilibriumPoint,
    eps: float = 1e-5,
    horizon: float = 100.0,
) -> str:
    """Tri-state boundary membership by unstable-manifold shooting.

    Perturbs the UEP by +-eps along each unstable eigendirection and
    integrates forward; "yes" as soon as one perturbation settles at the
    ASEP (the unstable manifold meets the stability region, hence the UEP
    lies on its boundary).
    """
    if uep.type_k < 1:
        raise ValueError("boundary test needs an unstable equilibrium")
    model = getattr(study_or_model, "system", study_or_model)
    J = model.jacobian(uep.state)
    Q = model.spectrum_basis
    if Q is not None:
        vals, vecs = np.linalg.eig(Q.T @ J @ Q)
    else:
        vals, vecs = np.linalg.eig(J)
    any_unknown = False
    seen = []
    for idx in np.argsort(-vals.real):
        if vals.real[idx] <= 0:
            break
        v = vecs[:, idx]
        v = np.real(v) if np.abs(np.real(v)).max() >= np.abs(np.imag(v)).max() else np.imag(v)
        if Q is not None:
            v = Q @ v
        v = v / np.linalg.norm(v)
        if any(min(np.linalg.norm(v - s), np.linalg.norm(v + s)) < 1e-9 for s in seen):
            continue
        seen.append(v)
        for sign in (+1.0, -1.0):
            start = uep.state + sign * eps * v
            verdict = _converges_to(study_or_model, start, asep.state, horizon)
            if verdict == "yes":
                return "yes"
            if verdict == "unknown":
                any_unknown = True
    return "unknown" if any_unknown else "no"


def closest_uep(
    study_or_model,
    energy,
    asep: EquilibriumPoint,
    candidates: Sequence[EquilibriumPoint],
    horizon: float = 100.0,
) -> EquilibriumPoint:
    """Boundary UEP with the lowest energy (ties: nearest to the ASEP).

    Candidates are visited in ascending (energy, distance-to-ASEP) order, so
    the first one confirmed on the boundary is the minimizer; the result is
    therefore invariant to the input ordering.  Candidates whose membership
    is still "unknown" are tested by shooting; ones that stay unknown are
    skipped.
    """
    ranked = []
    for cand in candidates:
        if cand.type_k < 1:
            continue
        e = cand.energy
        if e is None:
            e = float(energy.value(cand.state))
        ranked.append((e, float(np.linalg.norm(cand.state - asep.state)), cand))
    ranked.sort(key=lambda item: (item[0], item[1]))
    for e, _, cand in ranked:
        status = cand.on_boundary
        if status == "unknown":
            status = on_stability_boundary(study_or_model, cand, asep, horizon=horizon)
        if status == "yes":
            return replace(cand, on_boundary="yes", energy=e)
    raise NoBoundaryUEPError()
