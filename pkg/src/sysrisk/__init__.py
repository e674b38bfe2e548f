"""Systemic-risk simulator for banks borrowing at a central-bank rate."""

from .control import (
    BankPolicy,
    EffectiveMoments,
    PolicyResult,
    bank_policies,
    central_objective,
    effective_moments,
    g_i,
    h_of,
    optimal_alpha,
    optimal_rate,
    rho_i,
    system_moments,
)
from .dynamics import (
    NoiseFactorization,
    PathEnsemble,
    centered_paths,
    factorize_noise,
    mean_process,
    simulate,
)
from .model import (
    BankParams,
    CorrelationStructure,
    CovarianceMatrix,
    FixedRate,
    FlowRateMatrix,
    PolicyRate,
    SimulationConfig,
    ValidationError,
    build_covariance,
    validate_flows,
)
from .risk import DefaultReport, count_defaults, default_report, sweep
from .stability import (
    GeneratorMatrix,
    StabilityReport,
    build_generator,
    centered_moments,
    connectivity,
    ergodic_check,
    lyapunov_drift_certificate,
    spectral_gap,
    stationary_covariance,
)

__version__ = "0.1.0"
