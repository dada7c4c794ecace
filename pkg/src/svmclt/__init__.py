"""Regularized kernel estimation with certified asymptotic normality.

Solve kernel-regularized empirical risk minimization for smooth convex
losses (including mollifier-smoothed hinge and epsilon-insensitive
losses), differentiate the measure-to-solution map, build influence
functions and plug-in Gaussian limits, and certify the distributional
claims by seeded Monte Carlo replication.
"""

from .derivative import (CovarianceEstimate, DerivativeContext,
                         DegeneracyReport, FdCheckReport, build_context,
                         degeneracy_check, gateaux_fd_check,
                         influence_function, plugin_covariance, s_prime)
from .errors import InputError, InternalError, NumericError
from .kernels import (KernelSpec, RkhsFunction, cross_gram, eval_kernel,
                      feature_function, gram, h_distance, rkhs_inner,
                      rkhs_lincomb, sup_norm_kernel)
from .losses import (LipschitzLoss, SmoothLoss, SmoothnessReport,
                     check_smoothness, eps_insensitive, hinge, huber,
                     least_squares, logistic, make_loss, mollifier_constant,
                     mollify)
from .measures import (FiniteMeasure, combine, dirac, empirical, integrate,
                       read_measure_csv, sample, scale, write_measure_csv)
from .montecarlo import (AD_CRITICAL, CltReport, ExperimentConfig,
                         NormalityResult, NStats, coverage_check,
                         default_grid, ks_statistic, normality_test,
                         run_clt_experiment)
from .svm_solver import (SolveReport, norm_bound_check, risk, s_functional,
                         solve)

__version__ = "0.1.0"

__all__ = [
    "AD_CRITICAL", "CltReport", "CovarianceEstimate", "DegeneracyReport",
    "DerivativeContext", "ExperimentConfig", "FdCheckReport", "FiniteMeasure",
    "InputError", "InternalError", "KernelSpec", "LipschitzLoss",
    "NormalityResult", "NStats", "NumericError", "RkhsFunction",
    "SmoothLoss", "SmoothnessReport", "SolveReport", "build_context",
    "check_smoothness", "combine", "coverage_check", "cross_gram",
    "default_grid", "degeneracy_check", "dirac", "empirical",
    "eps_insensitive", "eval_kernel", "feature_function", "gateaux_fd_check",
    "gram", "h_distance", "hinge", "huber", "influence_function",
    "integrate", "ks_statistic", "least_squares", "logistic", "make_loss",
    "mollifier_constant", "mollify", "norm_bound_check", "normality_test",
    "plugin_covariance", "read_measure_csv", "risk", "rkhs_inner",
    "rkhs_lincomb", "run_clt_experiment", "s_functional", "s_prime",
    "sample", "scale", "solve", "sup_norm_kernel", "write_measure_csv",
    "__version__",
]
