"""Change-plane subgroup learning for functional responses under an RKHS penalty.

Estimation of coefficient functions and a grouping hyperplane, a
covariance-weighted refinement, a multiplier-bootstrap supremum score test
for subgroup existence, and Monte-Carlo study drivers.
"""

from .covariance import (CovarianceModel, assemble_phi, estimate_E,
                         estimate_Lambda, residual_processes, smooth_nu,
                         weighted_fit)
from .data import (ChangePlaneFit, CoefficientFunctions, DatasetSchema,
                   FitConfig, FunctionalDataset, evaluate_theta, load_dataset,
                   membership)
from .estimator import (PointwiseBands, ProfiledSolve, ProfileWorkspace,
                        SmootherSpec, fit, optimize_gamma, pointwise_bands,
                        profile_loss, profiled_coefficients, select_lambda,
                        smooth_indicator)
from .kernels import (KernelModel, KernelSpec, build_kernel_model, gram_matrix,
                      kernel_section, ridge_solve)
from .profile_kernel import HAVE_COMPILED
from .sgtest import (GammaFamily, SubgroupTestResult, bootstrap_pvalue,
                     build_gamma_family, corrected_influence, null_beta,
                     score_psi1, score_psi2, test_statistic)
from .simulate import (DGPSpec, accuracy_rate, generate, rase,
                       run_estimation_study, run_power_study)

__version__ = "0.1.0"

__all__ = [
    "ChangePlaneFit", "CoefficientFunctions", "CovarianceModel", "DGPSpec",
    "DatasetSchema", "FitConfig", "FunctionalDataset", "GammaFamily",
    "HAVE_COMPILED", "KernelModel", "KernelSpec", "PointwiseBands",
    "ProfileWorkspace", "ProfiledSolve", "SmootherSpec", "SubgroupTestResult",
    "accuracy_rate", "assemble_phi", "bootstrap_pvalue", "build_gamma_family",
    "build_kernel_model", "corrected_influence", "estimate_E",
    "estimate_Lambda", "evaluate_theta", "fit", "generate", "gram_matrix",
    "kernel_section", "load_dataset", "membership", "null_beta",
    "optimize_gamma", "pointwise_bands", "profile_loss",
    "profiled_coefficients", "rase", "residual_processes",
    "run_estimation_study", "run_power_study", "ridge_solve", "score_psi1",
    "score_psi2", "select_lambda", "smooth_indicator", "smooth_nu",
    "test_statistic", "weighted_fit",
]
