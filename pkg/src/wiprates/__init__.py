"""Numerical rates in the weak invariance principle for nonuniformly expanding semiflows."""

from .dynamics import (
    AffineRoof,
    ConstantRoof,
    DoublingMap,
    FlowState,
    InducedLsvMap,
    LsvMap,
    SuspensionSystem,
    make_system,
    suspension_evolve,
)
from .errors import (
    ConfigurationError,
    DivergenceError,
    FitError,
    InputError,
    NumericalError,
    SizeError,
    TruncationError,
    WipError,
)
from .process import PathSample, martingale_path, reverse_transform, wn_path, wn_paths
from .rates import ExperimentPlan, RateFit, RateTable, fit_rate, run_rate_experiment, theoretical_rate
from .transport import (
    holder_modulus_statistic,
    omega,
    sample_brownian,
    wasserstein_1d,
    wasserstein_assignment,
    wasserstein_bruteforce,
    wasserstein_entropic,
)
from .ulam import build_ulam, invariant_density, solve_coboundary

__version__ = "0.1.0"

__all__ = [
    "AffineRoof",
    "ConstantRoof",
    "DoublingMap",
    "FlowState",
    "InducedLsvMap",
    "LsvMap",
    "SuspensionSystem",
    "make_system",
    "suspension_evolve",
    "ConfigurationError",
    "DivergenceError",
    "FitError",
    "InputError",
    "NumericalError",
    "SizeError",
    "TruncationError",
    "WipError",
    "holder_modulus_statistic",
    "omega",
    "sample_brownian",
    "wasserstein_1d",
    "wasserstein_assignment",
    "wasserstein_bruteforce",
    "wasserstein_entropic",
    "PathSample",
    "martingale_path",
    "reverse_transform",
    "wn_path",
    "wn_paths",
    "ExperimentPlan",
    "RateFit",
    "RateTable",
    "fit_rate",
    "run_rate_experiment",
    "theoretical_rate",
    "build_ulam",
    "invariant_density",
    "solve_coboundary",
]
