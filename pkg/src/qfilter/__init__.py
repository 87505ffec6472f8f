"""Nonlinear Bayesian filtering for weak quantum-measurement chains."""

__version__ = "0.1.0"

from .errors import ConfigError, QFilterError  # noqa: E402
from .filters import (  # noqa: E402
    FilterConfig,
    FilterReport,
    empirical_risk,
    grid_filter,
    kalman_filter,
    optimal_filter_estimate,
    run_filter_pipeline,
)
from .kde import KernelSpec, fit_predictive, sequential_log_derivatives  # noqa: E402
from .models import (  # noqa: E402
    ChiSquaredModel,
    LinearGaussianModel,
    QubitChainModel,
    Trajectory,
    simulate_linear,
    simulate_microstep_chain,
    simulate_qubit_chain,
)
from .quantum import WeakMeasurementChain, coupling_unitary, measure, partial_trace  # noqa: E402
from .qudit import QuditState, artificial_qubits, coarse_grain, relabel  # noqa: E402

__all__ = [
    "ChiSquaredModel",
    "ConfigError",
    "FilterConfig",
    "FilterReport",
    "KernelSpec",
    "LinearGaussianModel",
    "QFilterError",
    "QubitChainModel",
    "QuditState",
    "Trajectory",
    "WeakMeasurementChain",
    "artificial_qubits",
    "coarse_grain",
    "coupling_unitary",
    "empirical_risk",
    "fit_predictive",
    "grid_filter",
    "kalman_filter",
    "measure",
    "optimal_filter_estimate",
    "partial_trace",
    "relabel",
    "run_filter_pipeline",
    "sequential_log_derivatives",
    "simulate_linear",
    "simulate_microstep_chain",
    "simulate_qubit_chain",
]
