"""Self-similar Gaussian processes: covariance kernels, exact sampling,
increment-ratio estimation of the roughness index and numerical checks of
the small-scale limit."""

from .estimator import (
    EstimateReport,
    LinkTable,
    Lambda,
    Lambda_inverse,
    Lambda_prime,
    SigmaTable,
    estimate_kappa,
    ir_statistic,
    lambda_of_r,
    psi,
    rho,
    sigma_series,
)
from .kernels import (
    CovarianceModel,
    ProcessFamily,
    covariance,
    covariance_model,
    direct_covariance,
    l_function,
    p_function,
    slow_var_L2,
)
from .quadrature import QuadratureError, QuadratureSpec, tanh_sinh
from .sampler import GridSample, ObservationGrid, cholesky_psd, gram_matrix, sample_path, sample_paths

__version__ = "0.1.0"

__all__ = [
    "CovarianceModel",
    "EstimateReport",
    "GridSample",
    "LinkTable",
    "Lambda",
    "Lambda_inverse",
    "Lambda_prime",
    "ObservationGrid",
    "ProcessFamily",
    "QuadratureError",
    "QuadratureSpec",
    "SigmaTable",
    "cholesky_psd",
    "covariance",
    "covariance_model",
    "direct_covariance",
    "estimate_kappa",
    "gram_matrix",
    "ir_statistic",
    "l_function",
    "lambda_of_r",
    "p_function",
    "psi",
    "rho",
    "sample_path",
    "sample_paths",
    "sigma_series",
    "slow_var_L2",
    "tanh_sinh",
]
