"""Stationary measure of the open ASEP with light particles: exact, matrix product and simulated."""

from .errors import GuardError, LightAsepError, NumericError, ParameterError, ResourceError, WrongPhaseError
from .phase import (
    BoundaryParams,
    LimitingDensities,
    Phase,
    PhaseLabel,
    RateParams,
    Region,
    boundary_to_rates,
    boundary_sigmas,
    bulk_profile,
    classify,
    drift_kappa,
    light_mass_split,
    limiting_densities,
    phi_pm,
    rates_to_boundary,
)

__version__ = "0.1.0"

from . import exact, experiments, mpa, sim  # noqa: E402

__all__ = [
    "BoundaryParams",
    "GuardError",
    "LightAsepError",
    "LimitingDensities",
    "NumericError",
    "ParameterError",
    "Phase",
    "PhaseLabel",
    "RateParams",
    "Region",
    "ResourceError",
    "WrongPhaseError",
    "boundary_sigmas",
    "boundary_to_rates",
    "exact",
    "experiments",
    "mpa",
    "sim",
    "bulk_profile",
    "classify",
    "drift_kappa",
    "light_mass_split",
    "limiting_densities",
    "phi_pm",
    "rates_to_boundary",
]
