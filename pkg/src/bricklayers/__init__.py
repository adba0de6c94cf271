"""Bricklayers' process: exact shock-measure identities, simulation and front tracking."""

from .errors import (
    BricklayersError,
    ComplexityError,
    ConfigError,
    ConvergenceError,
    OmegaCapError,
    ProfileError,
    RateRangeError,
    ThetaRangeError,
)
from .exactgen import (
    CylinderFunction,
    brute_force_evolution,
    identity_battery,
    lhs_derivative,
    rhs_lemma51,
    rhs_theorem41,
)
from .hydro import PiecewiseProfile, flux_J, front_track, rh_speed
from .kernel import (
    DEFAULT_TAIL_TOL,
    ParameterProfile,
    RateFunction,
    SiteMeasure,
    build_measure,
    expected_rates,
    mean_u,
    theta_of_u,
    u_of_theta,
    variance_u,
)
from .mcsim import SimParams, estimate_profile, run
from .walkers import WalkerConfig, master_equation, simulate, simulate_batch

__version__ = "0.1.0"

__all__ = [
    "BricklayersError",
    "ComplexityError",
    "ConfigError",
    "ConvergenceError",
    "CylinderFunction",
    "DEFAULT_TAIL_TOL",
    "OmegaCapError",
    "ParameterProfile",
    "PiecewiseProfile",
    "ProfileError",
    "RateFunction",
    "RateRangeError",
    "SimParams",
    "SiteMeasure",
    "ThetaRangeError",
    "WalkerConfig",
    "brute_force_evolution",
    "build_measure",
    "estimate_profile",
    "expected_rates",
    "flux_J",
    "front_track",
    "identity_battery",
    "lhs_derivative",
    "master_equation",
    "mean_u",
    "rh_speed",
    "rhs_lemma51",
    "rhs_theorem41",
    "run",
    "simulate",
    "simulate_batch",
    "theta_of_u",
    "u_of_theta",
    "variance_u",
]
