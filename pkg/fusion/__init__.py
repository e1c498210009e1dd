"""GNSS-visual-inertial sliding-window estimation package."""

from .errors import (
    ConfigError,
    DegenerateInputError,
    FusionError,
    InputError,
    InsufficientObservationsError,
    NonConvergenceError,
)
from .estimator import Estimator, EstimatorConfig, run_estimator
from .simulator import ScenarioConfig, simulate

__all__ = [
    "ConfigError",
    "DegenerateInputError",
    "Estimator",
    "EstimatorConfig",
    "FusionError",
    "InputError",
    "InsufficientObservationsError",
    "NonConvergenceError",
    "ScenarioConfig",
    "run_estimator",
    "simulate",
]
