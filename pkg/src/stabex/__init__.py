"""Transient stability boundary and critical clearing time toolkit."""

from .dynamics import (
    EULER,
    IMPROVED_EULER,
    RK3,
    SCHEMES,
    IntegratorControls,
    RKScheme,
    SystemModel,
    Trajectory,
    empirical_order,
    integrate,
    iterate_map,
    rk_step,
)
from .energy import EnergyFunction, LevelSet, energy_3machine, lyapunov_3d
from .equilibria import (
    EquilibriumPoint,
    closest_uep,
    enumerate_equilibria,
    find_equilibrium,
    on_stability_boundary,
)
from .models import (
    BENCHMARK_3D,
    THREE_MACHINE,
    FaultScenario,
    SMIBParams,
    StudySystem,
    benchmark3d_field,
    benchmark3d_study,
    smib_critical_angle,
    smib_critical_time,
    smib_field,
    smib_scenario,
    smib_study,
    three_machine_field,
    three_machine_study,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
