"""Cost-aware nonmyopic Bayesian optimization with pathwise lookahead policies."""

from .acquisition import AcqConfig, Candidate, optimize_baseline, optimize_lookahes, optimize_msl
from .core import BoxDomain, ConfigError, Dataset, DiscreteDomain, DomainError, NumericalError, SeedStream
from .costs import CostModel
from .environments import Environment, env_eval, make_environment
from .runner import ExperimentConfig, RunResult, __version__, compute_metrics, config_from_dict, run_experiment
from .surrogate import GpModel, KernelSpec, fit_gp, posterior

__all__ = [
    "AcqConfig",
    "BoxDomain",
    "Candidate",
    "ConfigError",
    "CostModel",
    "Dataset",
    "DiscreteDomain",
    "DomainError",
    "Environment",
    "ExperimentConfig",
    "GpModel",
    "KernelSpec",
    "NumericalError",
    "RunResult",
    "SeedStream",
    "__version__",
    "compute_metrics",
    "config_from_dict",
    "env_eval",
    "fit_gp",
    "make_environment",
    "optimize_baseline",
    "optimize_lookahes",
    "optimize_msl",
    "posterior",
    "run_experiment",
]
