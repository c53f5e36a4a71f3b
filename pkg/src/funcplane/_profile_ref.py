"""Pure-numpy reference implementation of the candidate-plane loss kernel.

Semantics are documented in :mod:`funcplane.profile_kernel`; the compiled
extension mirrors this module to within floating-point reassociation.
"""

import numpy as np
from scipy.special import ndtr

DEGENERATE_SD = 1e-12


def eval_candidates(idx, h, X, Xt, Yh, Rx, Sxx, mu, lam_nm, const_term,
                    beta_only_loss):
    """Unpenalized profile loss for a batch of candidate planes.

    Parameters
    ----------
    idx : ndarray, shape (C, n)
        Change-plane index values ``Z1 + Z2 @ gamma_c`` per candidate.
    h : float
        Smoothing bandwidth for the normal-CDF indicator surrogate.
    X, Xt : ndarray, shapes (n, p) and (n, d)
        Main and subgroup covariates.
    Yh : ndarray, shape (n, M)
        Responses mapped into the solve basis.
    Rx, Sxx : ndarray, shapes (p, M) and (p, p)
        Fixed right-hand-side block ``X.T @ Yh`` and ``X.T @ X``.
    mu : ndarray, shape (M,)
        Basis eigenvalues of the penalized quadratic form.
    lam_nm : float
        Ridge ``lambda * n * M``.
    const_term : float
        Response quadratic form, constant across candidates.
    beta_only_loss : float
        Loss assigned to candidates whose smoothed weights are numerically
        constant (subgroup effect unidentified there).

    Returns
    -------
    ndarray, shape (C,)
    """
    idx = np.ascontiguousarray(idx, dtype=float)
    n_cand, n = idx.shape
    p = X.shape[1]
    d = Xt.shape[1]
    n_grid = Yh.shape[1]

    g = ndtr(idx / h)
    degen = g.std(axis=1) < DEGENERATE_SD
    wxt = g[:, :, None] * Xt[None, :, :]

    pd = p + d
    S = np.empty((n_cand, pd, pd))
    S[:, :p, :p] = Sxx
    sxd = np.einsum("np,cnd->cpd", X, wxt, optimize=True)
    S[:, :p, p:] = sxd
    S[:, p:, :p] = sxd.transpose(0, 2, 1)
    S[:, p:, p:] = np.einsum("cnd,cne->cde", wxt, wxt, optimize=True)

    R = np.empty((n_cand, pd, n_grid))
    R[:, :p, :] = Rx
    R[:, p:, :] = np.einsum("cnd,nm->cdm", wxt, Yh, optimize=True)

    sig, Q = np.linalg.eigh(S)
    RQ = np.einsum("cji,cjm->cim", Q, R, optimize=True)
    z = RQ / (sig[:, :, None] * mu[None, None, :] + lam_nm)
    quad = np.einsum("cim,cim->c", RQ, z, optimize=True)
    un2 = np.einsum("cim,cim->c", z, z, optimize=True)

    losses = (const_term - quad - lam_nm * un2) / (2.0 * n * n_grid)
    losses[degen] = beta_only_loss
    return losses
