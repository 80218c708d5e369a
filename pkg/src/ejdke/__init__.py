"""Invariant-density estimation for ergodic jump diffusions.

Simulation of Levy-driven SDEs, anisotropic kernel estimators of the invariant
density, Goldenshluger-Lepski bandwidth selection and a Monte Carlo harness
for variance and rate checks.
"""
from .adaptive import (
    AdaptiveSelection,
    BandwidthGrid,
    bias_proxy,
    calibrate_k,
    candidate_bandwidths,
    select_bandwidth,
    variance_penalty,
)
from .estimator import (
    DensityEstimate,
    EvalGrid,
    estimate_density,
    estimate_density_convolved,
    l2_distance_on_A,
)
from .kernel import Kernel, ProductKernel, build_kernel, convolve_kernels
from .model import (
    AssumptionReport,
    LevySpec,
    ModelSpec,
    build_model,
    check_assumptions,
    generator_apply,
    lyapunov_probe,
)
from .rates import (
    RateReport,
    SmoothnessSpec,
    mse_experiment,
    rate_optimal_bandwidth,
    theoretical_rate,
    variance_probe,
)
from .simulate import (
    JumpBatch,
    Trajectory,
    levy_increments,
    read_trajectory,
    simulate_path,
    write_trajectory,
)

__version__ = "0.1.0"

__all__ = [
    "AdaptiveSelection",
    "AssumptionReport",
    "BandwidthGrid",
    "DensityEstimate",
    "EvalGrid",
    "JumpBatch",
    "Kernel",
    "LevySpec",
    "ModelSpec",
    "ProductKernel",
    "RateReport",
    "SmoothnessSpec",
    "Trajectory",
    "bias_proxy",
    "build_kernel",
    "build_model",
    "calibrate_k",
    "candidate_bandwidths",
    "check_assumptions",
    "convolve_kernels",
    "estimate_density",
    "estimate_density_convolved",
    "generator_apply",
    "l2_distance_on_A",
    "levy_increments",
    "lyapunov_probe",
    "mse_experiment",
    "rate_optimal_bandwidth",
    "read_trajectory",
    "select_bandwidth",
    "simulate_path",
    "theoretical_rate",
    "variance_penalty",
    "variance_probe",
    "write_trajectory",
]
