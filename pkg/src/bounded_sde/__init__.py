"""Boundary-preserving numerical schemes for SDEs confined to a box."""

from .core import (
    BoundedSdeModel,
    ConfigurationError,
    DomainError,
    Error,
    EvaluationError,
    FlowTag,
    State,
    TimeGrid,
    ValidationReport,
    coefficients_left,
    coefficients_right,
    gamma_left,
    gamma_right,
    newton_quotient_left,
    newton_quotient_right,
    project_component,
    validate_model,
)
from .integrators import (
    Scheme,
    SchemeConfig,
    StepResult,
    Trajectory,
    combine_step,
    euler_left_flow,
    euler_right_flow,
    exp_euler_positive_step,
    exp_milstein_positive_step,
    milstein_left_flow,
    milstein_right_flow,
    projected_euler_step,
    projected_milstein_step,
    simulate_batch_final,
    simulate_path,
    step,
    theta_weight,
)
from .convergence import (
    BrownianLattice,
    ConvergenceReport,
    ExactReference,
    ProbeReport,
    SchemeReference,
    coarsen,
    fit_order,
    generate_lattice,
    local_error_probe,
    rmse_experiment,
)
from .models import (
    BenchmarkCase,
    NagumoDiscretization,
    NoiseScaling,
    available_models,
    benchmark_case,
    example1_exact,
    example1_model,
    example2_model,
    example3_model,
    example4_model,
    nagumo_initial_profile,
    register_benchmark,
)

__version__ = "0.1.0"

__all__ = [
    "BoundedSdeModel",
    "BenchmarkCase",
    "BrownianLattice",
    "ConfigurationError",
    "ConvergenceReport",
    "DomainError",
    "Error",
    "EvaluationError",
    "ExactReference",
    "FlowTag",
    "NagumoDiscretization",
    "NoiseScaling",
    "ProbeReport",
    "Scheme",
    "SchemeConfig",
    "SchemeReference",
    "State",
    "StepResult",
    "TimeGrid",
    "Trajectory",
    "ValidationReport",
    "available_models",
    "benchmark_case",
    "coarsen",
    "coefficients_left",
    "coefficients_right",
    "combine_step",
    "euler_left_flow",
    "euler_right_flow",
    "example1_exact",
    "example1_model",
    "example2_model",
    "example3_model",
    "example4_model",
    "exp_euler_positive_step",
    "exp_milstein_positive_step",
    "fit_order",
    "gamma_left",
    "gamma_right",
    "generate_lattice",
    "local_error_probe",
    "milstein_left_flow",
    "milstein_right_flow",
    "nagumo_initial_profile",
    "newton_quotient_left",
    "newton_quotient_right",
    "project_component",
    "projected_euler_step",
    "projected_milstein_step",
    "register_benchmark",
    "rmse_experiment",
    "simulate_batch_final",
    "simulate_path",
    "step",
    "theta_weight",
    "validate_model",
]
