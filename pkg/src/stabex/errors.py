"""Exception types shared across the toolkit.

Every failure mode that callers are expected to catch gets its own class;
generic ValueError/RuntimeError is reserved for programming errors.
"""


class StabexError(Exception):
    """Base class for all toolkit errors."""


class NumericalBlowUpError(StabexError):
    """A Runge-Kutta stage produced a non-finite value.

    Carries the offending stage index and, when raised from an iterated
    composition, the iteration index as well.
    """

    def __init__(self, stage: int, iteration: int | None = None):
        self.stage = stage
        self.iteration = iteration
        where = f"stage {stage}"
        if iteration is not None:
            where += f", iteration {iteration}"
        super().__init__(f"numerical blow-up at {where}")


class StiffTrajectoryError(StabexError):
    """Adaptive step size underflowed: stiff or singular trajectory."""

    def __init__(self, t: float, step: float):
        self.t = t
        self.step = step
        super().__init__(f"stiff/singular trajectory: step {step:.3e} s at t={t:.6f} s")


class DivergenceError(StabexError):
    """State norm escaped the configured radius during integration.

    The partial trajectory up to the escape is attached so callers can
    inspect or truncate instead of losing the work.
    """

    def __init__(self, t: float, norm: float, trajectory=None):
        self.t = t
        self.norm = norm
        self.trajectory = trajectory
        super().__init__(f"divergence: |x| = {norm:.3e} at t={t:.6f} s")


class NewtonDivergenceError(StabexError):
    """Newton iteration failed to reach the residual tolerance."""

    def __init__(self, best_state, best_residual: float, iterations: int):
        self.best_state = best_state
        self.best_residual = best_residual
        self.iterations = iterations
        super().__init__(
            f"Newton divergence after {iterations} iterations "
            f"(best residual {best_residual:.3e})"
        )


class NonHyperbolicError(StabexError):
    """An equilibrium has an eigenvalue too close to the imaginary axis."""

    def __init__(self, state, margin: float):
        self.state = state
        self.margin = margin
        super().__init__(f"non-hyperbolic equilibrium: |Re lambda| min = {margin:.3e}")


class NoBoundaryUEPError(StabexError):
    """No unstable equilibrium on the stability boundary was found."""

    def __init__(self):
        super().__init__("no boundary UEP found (enlarge search box)")


class PEBSNotFoundError(StabexError):
    """No local maximum of potential energy within the fault-on horizon."""

    def __init__(self, horizon: float):
        self.horizon = horizon
        super().__init__(f"PEBS not found within {horizon:.3f} s (extend horizon)")


class BCUFailureError(StabexError):
    """The gradient-system trajectory produced no minimum gradient point."""

    def __init__(self, msg: str = "BCU failure: trajectory stays interior"):
        super().__init__(msg)


class CUEPNotLocatedError(StabexError):
    """Shadowing retries exhausted without locating the controlling UEP."""

    def __init__(self, rounds: int):
        self.rounds = rounds
        super().__init__(f"CUEP not located after {rounds} shadowing rounds")


class NoCrossingError(StabexError):
    """The expanded level was never reached along the scanned trajectory."""

    def __init__(self, iteration: int, t_end: float):
        self.iteration = iteration
        self.t_end = t_end
        super().__init__(
            f"no crossing up to t={t_end:.3f} s at iteration {iteration} "
            "(extend horizon or fault is CCT-unbounded at this critical value)"
        )


class VerdictTimeoutError(StabexError):
    """Stability verdict still inconclusive at the maximum horizon."""

    def __init__(self, horizon: float):
        self.horizon = horizon
        super().__init__(f"verdict timeout: inconclusive after {horizon:.1f} s")


class NoInstabilityError(StabexError):
    """Bisection bracket search never found an unstable clearing time."""

    def __init__(self, t_max: float):
        self.t_max = t_max
        super().__init__(f"no instability within scan range [0, {t_max:.2f}] s")


class NetworkDataError(StabexError):
    """Malformed, islanded or otherwise unusable network data."""


class ConfigError(StabexError):
    """Invalid run configuration."""
