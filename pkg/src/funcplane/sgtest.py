"""Supremum score test for subgroup existence with a multiplier bootstrap.

The null model drops the subgroup effect entirely; the score process of the
dropped coefficients, corrected for null-estimation error and studentized by
its empirical covariance, is maximized over a family of candidate planes.
Normal-multiplier perturbations of the corrected influence approximate the
null distribution of that supremum.  The hard indicator is used throughout:
the smoothing bandwidth of the estimation stage plays no role here.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .data import CoefficientFunctions, membership
from .errors import ConfigurationError, FamilyConstructionError
from .estimator import ProfileWorkspace
from .kernels import KernelSpec, build_kernel_model
from .rng import substream

#: Condition-number threshold for the score-equation Jacobian.
J_COND_LIMIT = 1e12
#: Relative ridge applied to near-singular score covariances.
VS_RIDGE = 1e-8


@dataclass(frozen=True)
class GammaFamily:
    """Candidate threshold planes for the supremum statistic."""

    candidates: np.ndarray
    construction: str
    frac_min: float = 0.1

    @property
    def size(self):
        return self.candidates.shape[0]


@dataclass(frozen=True)
class SubgroupTestResult:
    """Observed statistic, bootstrap draws, and the resulting p-value."""

    T_obs: float
    p_value: float
    per_gamma: np.ndarray
    boot_draws: np.ndarray
    B: int
    seed: int
    pinv_fallback: bool = False


def null_beta(dataset, lam, nu=0.2, kernel=None):
    """Penalized least-squares fit of the no-subgroup model.

    Solves the main-effect analogue of the profiled coefficient step (the
    working design is just ``X``) and returns coefficient functions with an
    empty subgroup block.
    """
    if kernel is None:
        kernel = build_kernel_model(dataset.grid, KernelSpec("gaussian", nu))
    ws = ProfileWorkspace(dataset, kernel, lam, h=1.0)
    u, _, _ = ws._eigsolve(ws.Sxx, ws.Rx)
    b = u @ ws.V.T
    return CoefficientFunctions(b=b, c=np.zeros((0, dataset.n_grid)), kernel=kernel)


def _null_residuals(dataset, beta_null):
    return dataset.Y - dataset.X @ beta_null.beta_grid


def score_psi1(dataset, beta_null, gamma):
    """Score of the dropped subgroup coefficients at a candidate plane.

    Entry ``(i, :, m)`` is ``resid_i(s_m) * Xt_i * I(plane index > 0)``; note
    the hard indicator.
    """
    ind = membership(dataset, gamma).astype(float)
    resid = _null_residuals(dataset, beta_null)
    return ind[:, None, None] * dataset.Xt[:, :, None] * resid[:, None, :]


def score_psi2(dataset, beta_null, kernel):
    """Kernel-averaged score of the null-model coefficients.

    Entry ``(i, :, m')`` is ``M^-1 sum_m resid_i(s_m) * X_i * k(s_m, s_m')``.
    """
    resid = _null_residuals(dataset, beta_null)
    rk = resid @ kernel.gram / dataset.n_grid
    return dataset.X[:, :, None] * rk[:, None, :]


@dataclass(frozen=True)
class CorrectedInfluence:
    """Projection-corrected influence with numerical-fallback metadata."""

    values: np.ndarray
    pinv_fallback: bool


def _jacobian_state(dataset, kernel):
    """Per-grid-point Jacobian of the null score in constant directions.

    ``J(s_m) = (X'X / n) * mean_m' k(s_m', s_m)``, so a single p x p inverse
    and the kernel column means describe all grid points.
    """
    sx = dataset.X.T @ dataset.X / dataset.n
    kbar = kernel.gram.mean(axis=0)
    pinv_fallback = bool(np.linalg.cond(sx) > J_COND_LIMIT)
    sx_inv = np.linalg.pinv(sx) if pinv_fallback else np.linalg.inv(sx)
    return sx_inv, kbar, pinv_fallback


def corrected_influence(dataset, beta_null, gamma, kernel):
    """Score influence corrected for the estimation error of the null fit.

    Subtracts ``D(gamma) J(s)^-1 psi2`` from ``psi1`` per grid point, with a
    pseudo-inverse fallback (flagged on the result) when the Jacobian is
    ill-conditioned.
    """
    psi1 = score_psi1(dataset, beta_null, gamma)
    psi2 = score_psi2(dataset, beta_null, kernel)
    ind = membership(dataset, gamma).astype(float)
    d_hat = (dataset.Xt * ind[:, None]).T @ dataset.X / dataset.n
    sx_inv, kbar, pinv_fallback = _jacobian_state(dataset, kernel)
    a = d_hat @ sx_inv
    corr = np.einsum("dp,ipm->idm", a, psi2 / kbar[None, None, :])
    return CorrectedInfluence(values=psi1 - corr, pinv_fallback=pinv_fallback)


def build_gamma_family(dataset, Q, mode="percentile_line", seed=0, frac_min=0.1,
                       slope=None):
    """Candidate planes splitting the sample at controlled fractions.

    ``percentile_line`` fixes the slope coordinates (default all ones) and
    sweeps the intercept through minus the a-percentiles of the induced
    index, a equally spaced in [0.2, 0.8].  ``random_directions`` draws unit
    slope vectors and percentile intercepts at random, rejecting candidates
    whose subgroup fraction leaves ``[frac_min, 1 - frac_min]``.
    """
    if Q < 1:
        raise ConfigurationError("Q must be at least 1")
    q = dataset.q
    z2_rest = dataset.Z2[:, 1:]

    def _fraction(cand):
        return float(np.mean(dataset.Z1 + dataset.Z2 @ cand > 0))

    if mode == "percentile_line":
        slope_vec = np.ones(q - 1) if slope is None else np.asarray(slope, dtype=float)
        if slope_vec.shape != (q - 1,):
            raise ConfigurationError(f"slope must have length q - 1 = {q - 1}")
        a_grid = np.array([0.5]) if Q == 1 else np.linspace(0.2, 0.8, Q)
        index0 = dataset.Z1 + z2_rest @ slope_vec
        intercepts = -np.quantile(index0, a_grid)
        cands = np.column_stack([intercepts, np.tile(slope_vec, (Q, 1))])
        fracs = np.array([_fraction(c) for c in cands])
        if np.any((fracs < frac_min) | (fracs > 1 - frac_min)):
            raise FamilyConstructionError(
                "percentile candidates violate the subgroup-fraction bounds "
                "(heavily tied index values)")
        return GammaFamily(candidates=cands, construction=mode, frac_min=frac_min)

    if mode == "random_directions":
        rng = substream(seed, "gamma-family")
        cands = []
        attempts = 0
        while len(cands) < Q and attempts < 100 * Q:
            attempts += 1
            if q > 1:
                raw = rng.standard_normal(q - 1)
                norm = np.linalg.norm(raw)
                if norm < 1e-12:
                    continue
                slope_vec = raw / norm
            else:
                slope_vec = np.zeros(0)
            a = rng.uniform(0.2, 0.8)
            index0 = dataset.Z1 + z2_rest @ slope_vec
            cand = np.concatenate([[-np.quantile(index0, a)], slope_vec])
            if frac_min <= _fraction(cand) <= 1 - frac_min:
                cands.append(cand)
        if len(cands) < Q:
            raise FamilyConstructionError(
                f"could not build {Q} valid candidates in {100 * Q} draws")
        return GammaFamily(candidates=np.asarray(cands), construction=mode,
                           frac_min=frac_min)

    raise ConfigurationError(f"unknown family mode: {mode!r}")


class _ScoreState:
    """Shared per-dataset quantities for the statistic and its bootstrap."""

    def __init__(self, dataset, beta_null, kernel):
        self.dataset = dataset
        self.kernel = kernel
        self.resid = _null_residuals(dataset, beta_null)
        sx_inv, kbar, self.pinv_fallback = _jacobian_state(dataset, kernel)
        psi2 = dataset.X[:, :, None] * (self.resid @ kernel.gram
                                        / dataset.n_grid)[:, None, :]
        # J(s)^-1 psi2 / kbar, ready to contract with per-plane D-hat
        self.q2 = np.einsum("qp,ipm->iqm", sx_inv, psi2) / kbar[None, None, :]

    def influence_chunk(self, gammas):
        """Corrected influence for a chunk of planes, shape (G, n, d, M)."""
        ds = self.dataset
        ind = (ds.Z1[None, :] + gammas @ ds.Z2.T > 0).astype(float)
        base = ds.Xt[:, :, None] * self.resid[:, None, :]
        psi1 = ind[:, :, None, None] * base[None, :, :, :]
        d_hat = np.einsum("gn,nd,np->gdp", ind, ds.Xt, ds.X) / ds.n
        corr = np.einsum("gdp,ipm->gidm", d_hat, self.q2)
        return psi1 - corr


def _stabilized_inverses(vs):
    """Invert per-point score covariances with a relative ridge when needed.

    ``vs`` has shape (G, M, d, d); returns the inverses and a usable mask
    (points with identically zero covariance contribute nothing).
    """
    g, m, d, _ = vs.shape
    tr = np.trace(vs, axis1=2, axis2=3)
    usable = tr > 0.0
    evals = np.linalg.eigvalsh(vs)
    bad = usable & ((evals[..., 0] <= 0)
                    | (evals[..., -1] > J_COND_LIMIT * np.maximum(evals[..., 0], 0)))
    ridge = np.where(bad, VS_RIDGE * tr / d, 0.0)
    vs_stab = vs + ridge[:, :, None, None] * np.eye(d)[None, None]
    safe = vs_stab.copy()
    safe[~usable] = np.eye(d)
    inv = np.linalg.inv(safe)
    return inv, usable


def _chunked(total, chunk):
    for start in range(0, total, chunk):
        yield start, min(start + chunk, total)


def _run_family(state, family, xi=None, chunk_bytes=2 ** 24):
    """Observed statistic per plane, plus bootstrap maxima when ``xi`` given."""
    ds = state.dataset
    n, d, m = ds.n, ds.d, ds.n_grid
    q_total = family.size
    per_gamma = np.empty(q_total)
    boot_max = None
    if xi is not None:
        boot_max = np.full(xi.shape[0], -np.inf)
        chunk = max(1, int(chunk_bytes / (8 * max(xi.shape[0], 1) * d * m)))
    else:
        chunk = max(1, int(chunk_bytes / (8 * n * d * m)))
    low_rank_warned = False
    for start, stop in _chunked(q_total, chunk):
        psi = state.influence_chunk(family.candidates[start:stop])
        g = psi.shape[0]
        vs = np.einsum("gidm,giem->gmde", psi, psi) / n
        vs_inv, usable = _stabilized_inverses(vs)
        frac_unusable = 1.0 - usable.mean(axis=1)
        if np.any(frac_unusable > 0.5) and not low_rank_warned:
            warnings.warn("score covariance singular at more than half the "
                          "grid points for some candidate planes; their "
                          "statistics are set to 0")
            low_rank_warned = True
        psi_bar = psi.mean(axis=1)
        quad = np.einsum("gdm,gmde,gem->gm", psi_bar, vs_inv, psi_bar) * n
        quad = np.where(usable, quad, 0.0)
        stats = quad.mean(axis=1)
        stats[frac_unusable > 0.5] = 0.0
        per_gamma[start:stop] = stats
        if xi is not None:
            flat = psi.transpose(1, 0, 2, 3).reshape(n, g * d * m)
            psi_star = (xi @ flat).reshape(xi.shape[0], g, d, m) / n
            bquad = np.einsum("bgdm,gmde,bgem->bgm", psi_star, vs_inv, psi_star) * n
            bquad = np.where(usable[None], bquad, 0.0)
            bstats = bquad.mean(axis=2)
            bstats[:, frac_unusable > 0.5] = 0.0
            boot_max = np.maximum(boot_max, bstats.max(axis=1))
    return per_gamma, boot_max


def test_statistic(dataset, beta_null, family, kernel):
    """Supremum over the family of the integrated studentized squared score.

    Returns ``(T_obs, per_gamma)`` where ``per_gamma`` holds the statistic at
    each candidate plane.
    """
    state = _ScoreState(dataset, beta_null, kernel)
    per_gamma, _ = _run_family(state, family)
    return float(per_gamma.max()), per_gamma


def bootstrap_pvalue(dataset, beta_null, family, kernel, B, seed):
    """Multiplier-bootstrap p-value of the supremum statistic.

    Draws standard-normal multipliers per subject, perturbs the corrected
    influence means (covariances stay fixed), and counts bootstrap suprema
    strictly exceeding the observed one.  Fully reproducible from ``seed``.
    """
    if B < 100:
        raise ConfigurationError("B must be at least 100")
    state = _ScoreState(dataset, beta_null, kernel)
    xi = np.empty((B, dataset.n))
    for b in range(B):
        xi[b] = substream(seed, "boot", b).standard_normal(dataset.n)
    per_gamma, boot_max = _run_family(state, family, xi=xi)
    t_obs = float(per_gamma.max())
    p_value = float(np.count_nonzero(boot_max > t_obs) / B)
    return SubgroupTestResult(T_obs=t_obs, p_value=p_value, per_gamma=per_gamma,
                              boot_draws=boot_max, B=B, seed=seed,
                              pinv_fallback=state.pinv_fallback)
