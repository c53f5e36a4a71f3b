"""Smoothed profiled estimation of the change-plane model.

For a candidate grouping parameter the coefficient functions solve a ridge
system in closed form (see :mod:`funcplane.profile_kernel` for the
factorization); the grouping parameter is then found by minimizing the
resulting concentrated, unpenalized loss with a Latin-hypercube screen
seeding multi-start Nelder-Mead.  The outer loop alternates the two steps
until the profile loss stabilizes.

A :class:`ProfileWorkspace` caches every quantity that is fixed across
candidate planes (basis transforms, response projections, covariate Gram
blocks), which is what makes plane searches and bootstrap refits cheap.
"""

import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.optimize
from scipy.special import ndtr
from scipy.stats import qmc

from . import profile_kernel
from ._profile_ref import DEGENERATE_SD
from .data import ChangePlaneFit, CoefficientFunctions
from .errors import ConfigurationError, DiagnosticsError, SingularSystemError
from .kernels import KernelSpec, build_kernel_model
from .rng import substream


@dataclass(frozen=True)
class SmootherSpec:
    """Indicator surrogate ``G_h(w) = G(w / h)`` with G the standard-normal CDF."""

    family: str = "normal_cdf"
    h: float = 1.0

    def __post_init__(self):
        if self.family != "normal_cdf":
            raise ConfigurationError(f"unsupported smoother family: {self.family!r}")
        if not self.h > 0:
            raise ConfigurationError("smoother bandwidth h must be positive")


def smooth_indicator(w, spec):
    """Smoothed indicator ``G_h(w)`` in [0, 1]; 0.5 at zero."""
    return ndtr(np.asarray(w, dtype=float) / spec.h)


@dataclass(frozen=True)
class ProfiledSolve:
    """Closed-form coefficient solve at a fixed grouping parameter."""

    d_vec: np.ndarray
    loss: float
    gamma: np.ndarray


class ProfileWorkspace:
    """Precomputed state for profiled solves at fixed (data, kernel, lam, h, weight).

    ``weight`` is an object exposing ``phi_inv`` (the stabilized inverse of
    the across-grid response covariance); ``None`` means ordinary least
    squares.
    """

    def __init__(self, dataset, kernel, lam, h, weight=None):
        self.dataset = dataset
        self.kernel = kernel
        self.lam = float(lam)
        self.h = float(h)
        if self.lam <= 0 or self.h <= 0:
            raise ConfigurationError("lam and h must be positive")
        n, m = dataset.n, dataset.n_grid
        rho = np.maximum(kernel.rho, np.finfo(float).tiny)
        U = kernel.eigvecs
        sq = np.sqrt(rho)
        Y = dataset.Y
        if weight is None:
            self.winner = None
            self.mu = np.ascontiguousarray(rho)
            self.V = U / sq[None, :]
            T = sq[:, None] * U.T
            self.const = float(np.sum(Y * Y))
        else:
            W = np.asarray(weight.phi_inv, dtype=float)
            W = 0.5 * (W + W.T)
            self.winner = W
            B = U * sq[None, :]
            mu, P = np.linalg.eigh(B.T @ W @ B)
            self.mu = np.ascontiguousarray(np.maximum(mu, 0.0))
            self.V = (U / sq[None, :]) @ P
            T = P.T @ (sq[:, None] * U.T) @ W
            self.const = float(np.sum((Y @ W) * Y))
        self.Yh = np.ascontiguousarray(Y @ T.T)
        self.X = np.ascontiguousarray(dataset.X)
        self.Xt = np.ascontiguousarray(dataset.Xt)
        self.Rx = np.ascontiguousarray(self.X.T @ self.Yh)
        self.Sxx = np.ascontiguousarray(self.X.T @ self.X)
        self.lam_nm = self.lam * n * m
        _, self.beta_only_loss, _ = self._eigsolve(self.Sxx, self.Rx)
        self._screen_cache = None

    # -- solves ---------------------------------------------------------

    def gh(self, gamma):
        """Smoothed membership weights at ``gamma`` for all subjects."""
        gamma = np.asarray(gamma, dtype=float)
        return ndtr((self.dataset.Z1 + self.dataset.Z2 @ gamma) / self.h)

    def _eigsolve(self, S, R, with_loss=True):
        sig, Q = np.linalg.eigh(S)
        RQ = Q.T @ R
        z = RQ / (sig[:, None] * self.mu[None, :] + self.lam_nm)
        u = Q @ z
        if not with_loss:
            return u, None, None
        n, m = self.dataset.n, self.dataset.n_grid
        quad = float(np.sum(RQ * z))
        un2 = float(np.sum(z * z))
        loss_unpen = (self.const - quad - self.lam_nm * un2) / (2.0 * n * m)
        loss_pen = (self.const - quad) / (2.0 * n * m)
        return u, loss_unpen, loss_pen

    def solve(self, gamma, rows=None):
        """Profiled normal equations at ``gamma``.

        Returns ``(u, loss_unpen, loss_pen)`` where ``u`` holds the solution
        in the decoupling basis (losses are None for row subsets).  Map to
        representer coefficients with :meth:`coefficients`.
        """
        g = self.gh(gamma)
        if rows is None:
            X, Xt, Yh, gv = self.X, self.Xt, self.Yh, g
            Sxx, Rx = self.Sxx, self.Rx
        else:
            X, Xt, Yh, gv = self.X[rows], self.Xt[rows], self.Yh[rows], g[rows]
            Sxx, Rx = X.T @ X, X.T @ Yh
        wxt = Xt * gv[:, None]
        p = X.shape[1]
        d = Xt.shape[1]
        S = np.empty((p + d, p + d))
        S[:p, :p] = Sxx
        S[:p, p:] = X.T @ wxt
        S[p:, :p] = S[:p, p:].T
        S[p:, p:] = wxt.T @ wxt
        R = np.vstack([Rx, wxt.T @ Yh])
        return self._eigsolve(S, R, with_loss=rows is None)

    def coefficients(self, u):
        """Representer coefficients, rows ``(b_1, ..., b_p, c_1, ..., c_d)``."""
        return u @ self.V.T

    # -- literal objective (used by the public API and oracles) ----------

    def objective(self, d_mat, gamma, penalized=True):
        """Smoothed loss at arbitrary coefficients, recomputed from residuals."""
        g = self.gh(gamma)
        w = np.hstack([self.X, self.Xt * g[:, None]])
        theta_grid = d_mat @ self.kernel.gram_stab
        resid = self.dataset.Y - w @ theta_grid
        if self.winner is None:
            quad = float(np.sum(resid * resid))
        else:
            quad = float(np.sum((resid @ self.winner) * resid))
        n, m = self.dataset.n, self.dataset.n_grid
        loss = quad / (2.0 * n * m)
        if penalized:
            loss += 0.5 * self.lam * float(np.sum(theta_grid * d_mat))
        return loss

    def gradient(self, d_mat, gamma):
        """Analytic gradient of the penalized smoothed loss in the coefficients."""
        g = self.gh(gamma)
        w = np.hstack([self.X, self.Xt * g[:, None]])
        K = self.kernel.gram_stab
        resid = self.dataset.Y - w @ (d_mat @ K)
        wr = resid if self.winner is None else resid @ self.winner
        n, m = self.dataset.n, self.dataset.n_grid
        return -(w.T @ wr) @ K / (n * m) + self.lam * (d_mat @ K)

    def profile_loss(self, gamma):
        """Unpenalized smoothed loss at the profiled coefficients for ``gamma``."""
        u, _, _ = self.solve(gamma)
        return self.objective(self.coefficients(u), gamma, penalized=False)

    # -- candidate search -------------------------------------------------

    def candidate_losses(self, cands):
        """Hot path: unpenalized profile loss for each candidate plane."""
        cands = np.atleast_2d(np.asarray(cands, dtype=float))
        idx = self.dataset.Z1[None, :] + cands @ self.dataset.Z2.T
        return profile_kernel.eval_candidates(
            np.ascontiguousarray(idx), self.h, self.X, self.Xt, self.Yh,
            self.Rx, self.Sxx, self.mu, self.lam_nm, self.const,
            self.beta_only_loss)

    def degenerate_mask(self, cands):
        cands = np.atleast_2d(np.asarray(cands, dtype=float))
        idx = self.dataset.Z1[None, :] + cands @ self.dataset.Z2.T
        return ndtr(idx / self.h).std(axis=1) < DEGENERATE_SD

    def screen(self, config):
        """Latin-hypercube screen over the gamma box (cached per workspace)."""
        key = (config.search_seed, config.screen_points, tuple(config.gamma_box))
        if self._screen_cache is None or self._screen_cache[0] != key:
            rng = substream(config.search_seed, "gamma-screen")
            sampler = qmc.LatinHypercube(d=self.dataset.q, seed=rng)
            lo, hi = config.gamma_box
            cands = lo + (hi - lo) * sampler.random(config.screen_points)
            losses = self.candidate_losses(cands)
            self._screen_cache = (key, cands, losses)
        return self._screen_cache[1], self._screen_cache[2]


def _make_workspace(dataset, config, weight):
    kernel = build_kernel_model(dataset.grid, KernelSpec("gaussian", config.kernel_nu))
    return ProfileWorkspace(dataset, kernel, config.lam, config.resolve_h(dataset.n),
                            weight)


def profiled_coefficients(dataset, gamma, config, weight=None):
    """Closed-form coefficient solve at ``gamma`` (Algorithm step 1).

    Returns a :class:`ProfiledSolve` whose ``loss`` is the penalized smoothed
    objective at the solution.
    """
    ws = _make_workspace(dataset, config, weight)
    gamma = np.asarray(gamma, dtype=float)
    u, _, _ = ws.solve(gamma)
    d_mat = ws.coefficients(u)
    return ProfiledSolve(d_vec=d_mat.ravel(),
                         loss=ws.objective(d_mat, gamma, penalized=True),
                         gamma=gamma)


def profile_loss(dataset, gamma, config, weight=None):
    """Unpenalized smoothed loss at the profiled coefficients for ``gamma``."""
    ws = _make_workspace(dataset, config, weight)
    return ws.profile_loss(np.asarray(gamma, dtype=float))


def optimize_gamma(dataset, config, weight=None, init=None, workspace=None):
    """Minimize the profile loss over the grouping-parameter box.

    Guarantees ``profile_loss(result) <= profile_loss(init)`` when ``init``
    is given.  If every candidate yields degenerate membership a
    flat-objective warning is emitted and ``init`` is returned.
    """
    ws = workspace if workspace is not None else _make_workspace(dataset, config, weight)
    q = dataset.q
    lo, hi = (float(v) for v in config.gamma_box)
    if init is not None:
        init = np.asarray(init, dtype=float)

    if config.search_mode == "grid":
        if q > 2:
            raise ConfigurationError("pure grid search is limited to q <= 2")
        axes = [np.linspace(lo, hi, config.grid_points)] * q
        cands = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, q)
        losses = ws.candidate_losses(cands)
        if ws.degenerate_mask(cands).all():
            warnings.warn("profile objective is flat: every candidate gives "
                          "degenerate membership")
            return init if init is not None else cands[0]
        best = cands[int(np.argmin(losses))]
        if init is None:
            return best
        return best if ws.profile_loss(best) <= ws.profile_loss(init) else init

    cands, losses = ws.screen(config)
    if ws.degenerate_mask(cands).all():
        warnings.warn("profile objective is flat: every candidate gives "
                      "degenerate membership")
        return init if init is not None else cands[int(np.argmin(losses))]
    order = np.argsort(losses)
    starts = [cands[j] for j in order[: config.nm_restarts]]
    if init is not None:
        starts.append(np.clip(init, lo, hi))
    bounds = scipy.optimize.Bounds(np.full(q, lo), np.full(q, hi))

    def fun(gm):
        return float(ws.candidate_losses(gm[None, :])[0])

    finalists = [cands[order[0]]]
    for start in starts:
        res = scipy.optimize.minimize(
            fun, start, method="Nelder-Mead", bounds=bounds,
            options={"xatol": 1e-5, "fatol": 1e-12,
                     "maxiter": 200 * q, "maxfev": 200 * q})
        finalists.append(res.x)
    if init is not None:
        finalists.append(init)
    vals = [ws.profile_loss(gm) for gm in finalists]
    return np.asarray(finalists[int(np.argmin(vals))], dtype=float)


def fit(dataset, config, weight=None):
    """Alternate coefficient solves and plane searches until convergence.

    Returns a :class:`funcplane.data.ChangePlaneFit`; non-convergence is
    reported through ``converged=False``, not an error.
    """
    kernel = build_kernel_model(dataset.grid, KernelSpec("gaussian", config.kernel_nu))
    h = config.resolve_h(dataset.n)
    ws = ProfileWorkspace(dataset, kernel, config.lam, h, weight)
    gamma = None if config.gamma_init is None else np.asarray(config.gamma_init, dtype=float)
    trace = [] if gamma is None else [ws.profile_loss(gamma)]
    converged = False
    n_iter = 0
    for _ in range(config.max_iter):
        n_iter += 1
        gamma = optimize_gamma(dataset, config, weight=weight, init=gamma, workspace=ws)
        trace.append(ws.profile_loss(gamma))
        if len(trace) >= 2 and abs(trace[-1] - trace[-2]) <= config.tol * (1.0 + abs(trace[-2])):
            converged = True
            break
    u, _, _ = ws.solve(gamma)
    d_mat = ws.coefficients(u)
    p = dataset.p
    theta = CoefficientFunctions(b=d_mat[:p], c=d_mat[p:], kernel=kernel)
    return ChangePlaneFit(theta=theta, gamma=np.asarray(gamma, dtype=float),
                          loss_trace=np.asarray(trace), converged=converged,
                          n_iter=n_iter, weighted=weight is not None,
                          lam=config.lam, h=h)


def select_lambda(dataset, config, weight=None):
    """Subject-level K-fold cross-validation over ``config.lambda_grid``.

    The grouping parameter is held fixed at a preliminary full-data fit (at
    the middle grid value); coefficients are re-profiled per training fold
    and scored by unpenalized prediction error on the held-out subjects.
    """
    if not config.lambda_grid:
        raise ConfigurationError("lambda_grid must be a nonempty sequence")
    grid = tuple(sorted(config.lambda_grid))
    k = config.cv_folds
    n = dataset.n
    if n // k < dataset.p + dataset.d:
        raise ConfigurationError(
            f"cv folds of about {n // k} subjects are smaller than p + d = "
            f"{dataset.p + dataset.d}")
    if len(grid) == 1:
        return float(grid[0])

    pre = fit(dataset, replace(config, lam=grid[len(grid) // 2]), weight=weight)
    gamma = pre.gamma
    perm = substream(config.cv_seed, "cv-folds").permutation(n)
    folds = [np.sort(perm[j::k]) for j in range(k)]

    errors = []
    for lam in grid:
        ws = ProfileWorkspace(dataset, pre.theta.kernel, lam, pre.h, weight)
        g = ws.gh(gamma)
        w_full = np.hstack([ws.X, ws.Xt * g[:, None]])
        total = 0.0
        for fold in folds:
            train = np.setdiff1d(np.arange(n), fold)
            u, _, _ = ws.solve(gamma, rows=train)
            theta_grid = ws.coefficients(u) @ ws.kernel.gram_stab
            resid = dataset.Y[fold] - w_full[fold] @ theta_grid
            total += float(np.sum(resid * resid))
        errors.append(total / (n * dataset.n_grid))
    return float(grid[int(np.argmin(errors))])


@dataclass(frozen=True)
class PointwiseBands:
    """Percentile bootstrap bands per coefficient function per grid point."""

    level: float
    estimate: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    n_boot: int
    n_failed: int


def pointwise_bands(dataset, config, fit_result, level=0.95, n_boot=500, seed=0,
                    weight=None):
    """Subject-level percentile bootstrap with the plane fixed at its estimate.

    Resamples subjects with replacement, re-solves the coefficients at the
    fitted grouping parameter, and takes pointwise percentile bands (expanded
    to contain the point estimate).
    """
    if not 0.0 < level < 1.0:
        raise ConfigurationError("level must be in (0, 1)")
    if n_boot < 100:
        raise ConfigurationError("n_boot must be at least 100")
    kernel = fit_result.theta.kernel
    ws = ProfileWorkspace(dataset, kernel, fit_result.lam, fit_result.h, weight)
    gamma = fit_result.gamma
    n = dataset.n
    n_fun = dataset.p + dataset.d
    curves = np.empty((n_boot, n_fun, dataset.n_grid))
    ok = np.ones(n_boot, dtype=bool)
    for b in range(n_boot):
        rows = substream(seed, "bands", b).integers(0, n, size=n)
        try:
            u, _, _ = ws.solve(gamma, rows=rows)
        except (SingularSystemError, np.linalg.LinAlgError):
            ok[b] = False
            continue
        curves[b] = ws.coefficients(u) @ kernel.gram
    n_failed = int(np.count_nonzero(~ok))
    if n_failed > 0.10 * n_boot:
        raise DiagnosticsError(f"{n_failed}/{n_boot} bootstrap refits failed")
    alpha = 0.5 * (1.0 - level)
    lower = np.quantile(curves[ok], alpha, axis=0)
    upper = np.quantile(curves[ok], 1.0 - alpha, axis=0)
    estimate = np.vstack([fit_result.theta.beta_grid, fit_result.theta.delta_grid])
    return PointwiseBands(level=level, estimate=estimate,
                          lower=np.minimum(lower, estimate),
                          upper=np.maximum(upper, estimate),
                          n_boot=n_boot, n_failed=n_failed)
