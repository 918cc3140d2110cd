"""
高頻度データに基づく拡散過程の潜在因子構造方程式モデリングを提供するパッケージ。
"""

__version__ = "1.0.0"

from .errors import (
    ConfigError,
    ConsistencyError,
    DataError,
    DimensionError,
    DomainError,
    HarnessError,
    HfsemError,
    ModelError,
    NotPositiveDefiniteError,
    SimulationError,
    TestUndefinedError,
)
from .lisrel_model import ParameterMask, build_sigma, check_local_identifiability, load_mask, sigma_jacobian
from .sde_sim import DiffusionSystem, PathSample, SamplingGrid, load_system, simulate_observations
from .realized_cov import RealizedCov, realized_cov
from .qmle import FitResult, contrast_f, fit, population_fit, standard_errors
from .inference import TestReport, chi2_upper_quantile, gof_test, penalized_gof_test
from .sparse_sem import PenaltyConfig, SparseFitResult, sparse_pipeline
from .harness import AggregateReport, ExperimentConfig, emit_tables, load_experiment, run_experiment

__all__ = [
    '__version__',
    'HfsemError',
    'DimensionError',
    'DomainError',
    'NotPositiveDefiniteError',
    'ModelError',
    'ConsistencyError',
    'SimulationError',
    'DataError',
    'TestUndefinedError',
    'ConfigError',
    'HarnessError',
    'ParameterMask',
    'build_sigma',
    'sigma_jacobian',
    'check_local_identifiability',
    'load_mask',
    'DiffusionSystem',
    'SamplingGrid',
    'PathSample',
    'simulate_observations',
    'load_system',
    'RealizedCov',
    'realized_cov',
    'FitResult',
    'fit',
    'contrast_f',
    'standard_errors',
    'population_fit',
    'TestReport',
    'chi2_upper_quantile',
    'gof_test',
    'penalized_gof_test',
    'PenaltyConfig',
    'SparseFitResult',
    'sparse_pipeline',
    'ExperimentConfig',
    'AggregateReport',
    'load_experiment',
    'run_experiment',
    'emit_tables',
]
