"""heavyq: state-dependent open queueing networks and their heavy-traffic limits.

Event-driven simulation of non-Markovian networks with queue-length-dependent
rates, the orthant Skorohod map, the reflected limit diffusion, and a harness
that checks diffusion-scaled queue lengths against the limit law.
"""

__version__ = "0.1.0"

from .harness import (
    ComparisonReport,
    ExperimentConfig,
    SweepResult,
    build_report,
    emit_report,
    ks_critical,
    ks_two_sample,
    load_config,
    parse_config,
    run_scaling_sweep,
    validate_config,
)
from .limits import (
    CovarianceMatrix,
    JacksonParams,
    LimitSpec,
    build_covariance,
    build_limit_martingale_path,
    rbm_special_case,
    sample_reflected_marginals,
    simulate_reflected_diffusion,
)
from .network import (
    AffineRate,
    ConditionViolation,
    ConstantRate,
    DriftFunction,
    ModelConditionError,
    NetworkTopology,
    RateFunction,
    ScaledRate,
    ScalingFamily,
    TabulatedRate,
    build_reflection_matrix,
    drift_function,
    effective_rates,
    spectral_radius,
    validate_family,
)
from .paths import GridPath, uniform_grid
from .primitives import PrimitiveStream, RenewalSpec, RoutingStream
from .simulator import (
    ExplosionError,
    SimConfig,
    TraceDecomposition,
    Trajectory,
    decompose_trace,
    scaled_queue_path,
    simulate_direct,
    simulate_uniformized,
)
from .skorohod import OrthantReflector, SPSolution, solve_sp, solve_sp_1d

__all__ = [
    "__version__",
    "GridPath",
    "uniform_grid",
    "RateFunction",
    "ConstantRate",
    "AffineRate",
    "TabulatedRate",
    "NetworkTopology",
    "ScalingFamily",
    "ScaledRate",
    "DriftFunction",
    "ModelConditionError",
    "ConditionViolation",
    "build_reflection_matrix",
    "spectral_radius",
    "effective_rates",
    "drift_function",
    "validate_family",
    "RenewalSpec",
    "PrimitiveStream",
    "RoutingStream",
    "SPSolution",
    "OrthantReflector",
    "solve_sp",
    "solve_sp_1d",
    "SimConfig",
    "Trajectory",
    "TraceDecomposition",
    "ExplosionError",
    "simulate_direct",
    "simulate_uniformized",
    "decompose_trace",
    "scaled_queue_path",
    "JacksonParams",
    "CovarianceMatrix",
    "LimitSpec",
    "build_covariance",
    "build_limit_martingale_path",
    "simulate_reflected_diffusion",
    "sample_reflected_marginals",
    "rbm_special_case",
    "ExperimentConfig",
    "SweepResult",
    "ComparisonReport",
    "load_config",
    "parse_config",
    "validate_config",
    "run_scaling_sweep",
    "build_report",
    "emit_report",
    "ks_two_sample",
    "ks_critical",
]
