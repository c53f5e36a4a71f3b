"""Residual smoothing, covariance estimation, and the weighted (GLS) refit.

The subject-level processes are recovered by kernel-ridge smoothing of the
fit residuals; their empirical covariance plus the smoothed measurement-error
variance gives the across-grid covariance whose stabilized inverse weights
the second-stage fit.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtr

from . import estimator
from .errors import CovarianceAssemblyError
from .kernels import ridge_solve

#: Condition-number threshold beyond which the assembled covariance gets a ridge.
PHI_COND_LIMIT = 1e10


@dataclass(frozen=True)
class CovarianceModel:
    """Estimated process covariance, error variance, and stabilized inverse.

    ``phi_hat`` is the raw assembly ``lambda_hat + diag(e_hat_diag)``;
    ``phi_inv`` inverts ``phi_hat + ridge_added * I``.
    """

    lambda_hat: np.ndarray
    e_hat_diag: np.ndarray
    phi_hat: np.ndarray
    phi_inv: np.ndarray
    ridge_added: float

    @property
    def phi_stab(self):
        return self.phi_hat + self.ridge_added * np.eye(self.phi_hat.shape[0])

    @classmethod
    def identity(cls, m):
        """Identity weight; the weighted fit then reduces to the unweighted one."""
        eye = np.eye(m)
        return cls(lambda_hat=np.zeros((m, m)), e_hat_diag=np.ones(m),
                   phi_hat=eye.copy(), phi_inv=eye.copy(), ridge_added=0.0)


def residual_processes(dataset, fit_result):
    """Per-subject residual curves ``Y_i - fitted mean`` on the grid.

    The fitted mean uses the smoothed membership at the fitted plane, so the
    residuals approximate process plus measurement error.
    """
    g = ndtr((dataset.Z1 + dataset.Z2 @ fit_result.gamma) / fit_result.h)
    fitted = dataset.X @ fit_result.theta.beta_grid \
        + (dataset.Xt * g[:, None]) @ fit_result.theta.delta_grid
    return dataset.Y - fitted


def smooth_nu(residuals, kernel, lam):
    """Kernel-ridge smooth of each residual curve.

    Solves ``(gram + lam * M * I) f_i = y_i^*`` per subject and returns the
    coefficient matrix and the smoothed curves ``f_i`` contracted with the
    Gram matrix, both shaped (n, M).
    """
    residuals = np.asarray(residuals, dtype=float)
    m = kernel.gram.shape[0]
    f_hat = ridge_solve(kernel.gram, lam * m, residuals.T).T
    return f_hat, f_hat @ kernel.gram


def estimate_Lambda(nu_hat_grid):
    """Empirical covariance of the smoothed subject processes on the grid."""
    nu_hat_grid = np.asarray(nu_hat_grid, dtype=float)
    n = nu_hat_grid.shape[0]
    return nu_hat_grid.T @ nu_hat_grid / n


def _error_floor(lambda_diag):
    return 1e-8 * float(np.mean(lambda_diag + 1.0))


def estimate_E(residuals, nu_hat_grid, kernel, lam):
    """Measurement-error variance on the grid diagonal.

    Smooths the mean squared leftover ``e_i^* = y_i^* - nu_i`` through the
    same kernel ridge and floors the result at a small positive constant.
    """
    residuals = np.asarray(residuals, dtype=float)
    nu_hat_grid = np.asarray(nu_hat_grid, dtype=float)
    e_star = residuals - nu_hat_grid
    m = kernel.gram.shape[0]
    target = np.mean(e_star * e_star, axis=0)
    g_hat = ridge_solve(kernel.gram, lam * m, target)
    lambda_diag = np.mean(nu_hat_grid * nu_hat_grid, axis=0)
    return np.maximum(kernel.gram @ g_hat, _error_floor(lambda_diag))


def assemble_phi(lambda_hat, e_hat_diag, stabilization_eps=1e-8):
    """Assemble the across-grid covariance and its stabilized inverse.

    Adds ``stabilization_eps * mean(diag)`` to the diagonal before inverting
    whenever the condition estimate exceeds ``PHI_COND_LIMIT``; the amount is
    recorded on the returned model.
    """
    lambda_hat = np.asarray(lambda_hat, dtype=float)
    lambda_hat = 0.5 * (lambda_hat + lambda_hat.T)
    e_hat_diag = np.maximum(np.asarray(e_hat_diag, dtype=float),
                            _error_floor(np.diag(lambda_hat)))
    phi = lambda_hat + np.diag(e_hat_diag)
    evals = np.linalg.eigvalsh(phi)
    scale = max(evals[-1], 0.0)
    if evals[0] < -1e-8 * max(scale, 1.0):
        raise CovarianceAssemblyError(
            f"assembled covariance is not PSD (min eigenvalue {evals[0]:.3e})")
    ridge = 0.0
    if evals[0] <= 0 or scale / max(evals[0], np.finfo(float).tiny) > PHI_COND_LIMIT:
        ridge = stabilization_eps * float(np.mean(np.diag(phi)))
    stabilized = phi + ridge * np.eye(phi.shape[0])
    inv = np.linalg.inv(stabilized)
    inv = 0.5 * (inv + inv.T)
    return CovarianceModel(lambda_hat=lambda_hat, e_hat_diag=e_hat_diag,
                           phi_hat=phi, phi_inv=inv, ridge_added=ridge)


def estimate_covariance(dataset, fit_result, lam_cov):
    """Full pipeline: residuals -> smoothed processes -> assembled covariance."""
    kernel = fit_result.theta.kernel
    resid = residual_processes(dataset, fit_result)
    _, nu_hat = smooth_nu(resid, kernel, lam_cov)
    lambda_hat = estimate_Lambda(nu_hat)
    e_diag = estimate_E(resid, nu_hat, kernel, lam_cov)
    return assemble_phi(lambda_hat, e_diag)


def weighted_fit(dataset, config, init_fit, weight=None):
    """Covariance-weighted refit seeded at the unweighted estimate.

    Estimates the covariance from ``init_fit`` residuals (unless ``weight``
    is supplied, e.g. an identity override) and reruns the alternating fit
    with the inverse-covariance quadratic form, starting from ``init_fit``'s
    grouping parameter.
    """
    if weight is None:
        lam_cov = config.lambda_cov if config.lambda_cov is not None else config.lam
        weight = estimate_covariance(dataset, init_fit, lam_cov)
    cfg = replace(config, gamma_init=tuple(float(v) for v in init_fit.gamma))
    return estimator.fit(dataset, cfg, weight=weight)
