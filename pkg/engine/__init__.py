# Engine package
from .malliavin_probe import (
    DerivativePath,
    ShiftSpec,
    derivative_bound_check,
    progeny_check,
    shift_and_resolve,
    theta_irrelevance_check,
)
from .poisson_field import PoissonField, ShiftedField, SplicedField
from .simulator import (
    PathRecord,
    SimulationSettings,
    compensator,
    compensator_at,
    compensator_refinement_gap,
    dominance_audit,
    intensity_at,
    martingale_check,
    simulate_path,
    simulate_replicas,
    stationary_sigma2,
    time_rescaling_ks,
)

__all__ = [
    "DerivativePath",
    "PathRecord",
    "PoissonField",
    "ShiftSpec",
    "ShiftedField",
    "SimulationSettings",
    "SplicedField",
    "compensator",
    "compensator_at",
    "compensator_refinement_gap",
    "derivative_bound_check",
    "dominance_audit",
    "intensity_at",
    "martingale_check",
    "progeny_check",
    "shift_and_resolve",
    "simulate_path",
    "simulate_replicas",
    "stationary_sigma2",
    "theta_irrelevance_check",
    "time_rescaling_ks",
]
