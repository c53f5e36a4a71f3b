"""Synthetic data generation, evaluation metrics, and Monte-Carlo drivers.

The generator follows the benchmark design used throughout the package:
three correlated main covariates of which the first two carry the subgroup
effect, a standard-normal plane variable with one shifted-normal companion,
a two-component stochastic process, and white measurement error.  Study
drivers run matched-seed unweighted/weighted comparisons and the size/power
sweep, with per-replication substreams so results do not depend on worker
count.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import covariance, estimator, sgtest
from .data import FunctionalDataset, membership
from .errors import StudyError
from .kernels import KernelSpec, build_kernel_model
from .parallel import pmap
from .rng import substream

GAMMA_TRUE = (-1.0, 1.0)
X_COV = np.array([[1.0, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 1.0]])
_X_CHOL = np.linalg.cholesky(X_COV)

BETA_FUNCTIONS = (
    lambda s: (1.0 - s) ** 3,
    lambda s: np.exp(-(s ** 2)),
    lambda s: np.sin(np.pi * s) + s ** 3,
)
DELTA_FUNCTIONS = (
    lambda s: (1.0 - s) ** 2,
    lambda s: np.exp(-5.0 * s),
)


def principal_components(grid):
    """The two orthonormal process components evaluated at the grid."""
    grid = np.asarray(grid, dtype=float)
    return np.vstack([np.sqrt(2.0) * np.sin(2.0 * np.pi * grid),
                      np.sqrt(2.0) * np.cos(2.0 * np.pi * grid)])


def true_lambda(grid, fpc_sds=(1.0, np.sqrt(0.5))):
    """Analytic process covariance on the grid implied by the expansion."""
    comps = principal_components(grid)
    weights = np.asarray(fpc_sds, dtype=float) ** 2
    return (comps.T * weights) @ comps


@dataclass(frozen=True)
class DGPSpec:
    """Data-generating configuration.

    ``c=None`` keeps the subgroup effect at full strength (estimation
    studies); a number rescales it to ``c / sqrt(n)`` (local alternatives for
    the testing study, with ``c=0`` the null).
    """

    n: int
    M: int
    c: float = None
    gamma_true: tuple = GAMMA_TRUE
    noise_sd_e: float = np.sqrt(0.1)
    fpc_sds: tuple = (1.0, np.sqrt(0.5))
    seed: int = 0

    def __post_init__(self):
        if self.n < 2 or self.M < 2:
            raise ValueError("n and M must be at least 2")
        if self.c is not None and self.c < 0:
            raise ValueError("c must be nonnegative")


@dataclass(frozen=True)
class GroundTruth:
    """True curves (at the scale entering the response) and labels."""

    gamma: np.ndarray
    beta_grid: np.ndarray
    delta_grid: np.ndarray
    labels: np.ndarray


def generate(spec):
    """Draw one dataset; bit-identical for a fixed spec.

    Returns ``(dataset, truth)``.  Draw order: grid, X, Z1, Z2, process
    scores, measurement error.
    """
    rng = substream(spec.seed, "dgp")
    n, m = spec.n, spec.M
    grid = np.sort(rng.uniform(size=m))
    while np.unique(grid).size != m:  # pragma: no cover - probability zero
        grid = np.sort(rng.uniform(size=m))
    X = rng.standard_normal((n, 3)) @ _X_CHOL.T
    Z1 = rng.standard_normal(n)
    Z2 = np.column_stack([np.ones(n), 1.0 + rng.standard_normal(n)])
    xi = rng.standard_normal((n, 2)) * np.asarray(spec.fpc_sds)
    noise = rng.standard_normal((n, m)) * spec.noise_sd_e

    gamma = np.asarray(spec.gamma_true, dtype=float)
    labels = Z1 + Z2 @ gamma > 0
    beta_grid = np.vstack([f(grid) for f in BETA_FUNCTIONS])
    scale = 1.0 if spec.c is None else spec.c / np.sqrt(n)
    delta_grid = scale * np.vstack([f(grid) for f in DELTA_FUNCTIONS])
    nu = xi @ principal_components(grid)

    xtilde_idx = (0, 1)
    Y = X @ beta_grid + (X[:, list(xtilde_idx)] * labels[:, None]) @ delta_grid \
        + nu + noise
    dataset = FunctionalDataset(Y=Y, X=X, xtilde_idx=xtilde_idx, Z1=Z1, Z2=Z2,
                                grid=grid)
    truth = GroundTruth(gamma=gamma, beta_grid=beta_grid, delta_grid=delta_grid,
                        labels=labels)
    return dataset, truth


def accuracy_rate(true_labels, est_labels):
    """Fraction of subjects assigned to the same subgroup."""
    true_labels = np.asarray(true_labels, dtype=bool)
    est_labels = np.asarray(est_labels, dtype=bool)
    if true_labels.shape != est_labels.shape:
        raise ValueError("label vectors must have equal length")
    return float(np.mean(true_labels == est_labels))


def rase(est_fn, true_fn):
    """Root-average squared error over the grid."""
    est_fn = np.asarray(est_fn, dtype=float)
    true_fn = np.asarray(true_fn, dtype=float)
    if est_fn.shape != true_fn.shape:
        raise ValueError("curves must have equal length")
    return float(np.sqrt(np.mean((est_fn - true_fn) ** 2)))


COMPONENTS = ("beta1", "beta2", "beta3", "delta1", "delta2")


def _derived_seed(seed, *labels):
    return int(substream(seed, *labels).integers(0, 2 ** 63 - 1))


def _fit_metrics(dataset, truth, fit_result):
    est_curves = np.vstack([fit_result.theta.beta_grid,
                            fit_result.theta.delta_grid])
    true_curves = np.vstack([truth.beta_grid, truth.delta_grid])
    return {
        "gamma": tuple(float(v) for v in fit_result.gamma),
        "accuracy": accuracy_rate(truth.labels, membership(dataset, fit_result.gamma)),
        "rase": {name: rase(est_curves[j], true_curves[j])
                 for j, name in enumerate(COMPONENTS)},
        "gamma_err_norm": float(np.linalg.norm(fit_result.gamma - truth.gamma)),
        "converged": bool(fit_result.converged),
    }


def _estimation_rep(task):
    n, m, cell_idx, rep, config, seed = task
    start = time.perf_counter()
    try:
        spec = DGPSpec(n=n, M=m, seed=_derived_seed(seed, "est-data", cell_idx, rep))
        dataset, truth = generate(spec)
        ls = estimator.fit(dataset, config)
        lam_cov = config.lambda_cov if config.lambda_cov is not None else config.lam
        weight = covariance.estimate_covariance(dataset, ls, lam_cov)
        wls = covariance.weighted_fit(dataset, config, ls, weight=weight)
        sup_err = float(np.max(np.abs(weight.lambda_hat
                                      - true_lambda(dataset.grid, spec.fpc_sds))))
        return {
            "cell": (n, m), "rep": rep, "ok": True,
            "ls": _fit_metrics(dataset, truth, ls),
            "wls": _fit_metrics(dataset, truth, wls),
            "lambda_sup_err": sup_err,
            "runtime": time.perf_counter() - start,
        }
    except Exception as exc:  # noqa: BLE001 - recorded, not fatal
        return {"cell": (n, m), "rep": rep, "ok": False, "error": repr(exc),
                "runtime": time.perf_counter() - start}


@dataclass
class EstimationStudyResult:
    """Raw per-replication records plus table-shaped aggregations."""

    cells: list
    reps: int
    records: list
    runtimes: dict = field(default_factory=dict)

    def _cell_records(self, cell):
        return [r for r in self.records if r["ok"] and tuple(r["cell"]) == tuple(cell)]

    def gamma_table(self):
        """Bias and SD of each grouping coordinate per cell and method."""
        rows = []
        for cell in self.cells:
            recs = self._cell_records(cell)
            for method in ("ls", "wls"):
                gammas = np.array([r[method]["gamma"] for r in recs])
                bias = gammas.mean(axis=0) - np.asarray(GAMMA_TRUE)
                sd = gammas.std(axis=0, ddof=1)
                rows.append({"n": cell[0], "M": cell[1], "method": method.upper(),
                             "bias_gamma1": bias[0], "bias_gamma2": bias[1],
                             "sd_gamma1": sd[0], "sd_gamma2": sd[1]})
        return rows

    def accuracy_table(self):
        """Mean subgroup-assignment accuracy per cell and method."""
        rows = []
        for cell in self.cells:
            recs = self._cell_records(cell)
            for method in ("ls", "wls"):
                acc = np.array([r[method]["accuracy"] for r in recs])
                rows.append({"n": cell[0], "M": cell[1], "method": method.upper(),
                             "accuracy_mean": acc.mean(), "accuracy_sd": acc.std(ddof=1)})
        return rows

    def rase_table(self):
        """RASE mean and SD per coefficient function, cell, and method."""
        rows = []
        for cell in self.cells:
            recs = self._cell_records(cell)
            for method in ("ls", "wls"):
                for comp in COMPONENTS:
                    vals = np.array([r[method]["rase"][comp] for r in recs])
                    rows.append({"n": cell[0], "M": cell[1], "method": method.upper(),
                                 "component": comp, "rase_mean": vals.mean(),
                                 "rase_sd": vals.std(ddof=1),
                                 "rase_median": float(np.median(vals))})
        return rows

    def median_metrics(self, cell, method="ls"):
        """Median RASE per component and median grouping error for one cell."""
        recs = self._cell_records(cell)
        out = {comp: float(np.median([r[method]["rase"][comp] for r in recs]))
               for comp in COMPONENTS}
        out["gamma_err"] = float(np.median([r[method]["gamma_err_norm"] for r in recs]))
        return out

    def lambda_sup_errors(self, cell):
        return np.array([r["lambda_sup_err"] for r in self._cell_records(cell)])


def run_estimation_study(cells, reps, config, seed, threads=1):
    """Matched-seed LS/WLS study over ``(n, M)`` cells.

    Individual replication failures are recorded rather than fatal; the study
    errors out if more than 5% fail.
    """
    if reps < 1:
        raise StudyError("reps must be at least 1")
    start = time.perf_counter()
    tasks = [(n, m, ci, rep, config, seed)
             for ci, (n, m) in enumerate(cells) for rep in range(reps)]
    records = pmap(_estimation_rep, tasks, threads=threads)
    failures = sum(0 if r["ok"] else 1 for r in records)
    if failures > 0.05 * len(records):
        raise StudyError(f"{failures}/{len(records)} replications failed")
    return EstimationStudyResult(cells=[tuple(c) for c in cells], reps=reps,
                                 records=records,
                                 runtimes={"total": time.perf_counter() - start})


def _power_rep(task):
    c, n, m, c_idx, rep, config, B, Q, family_mode, frac_min, seed = task
    start = time.perf_counter()
    try:
        spec = DGPSpec(n=n, M=m, c=c, seed=_derived_seed(seed, "pow-data", c_idx, rep))
        dataset, _ = generate(spec)
        kernel = build_kernel_model(dataset.grid, KernelSpec("gaussian", config.kernel_nu))
        beta0 = sgtest.null_beta(dataset, config.lam, kernel=kernel)
        family = sgtest.build_gamma_family(
            dataset, Q, mode=family_mode, frac_min=frac_min,
            seed=_derived_seed(seed, "pow-family", c_idx, rep))
        res = sgtest.bootstrap_pvalue(dataset, beta0, family, kernel, B,
                                      seed=_derived_seed(seed, "pow-test", c_idx, rep))
        return {"c": c, "rep": rep, "ok": True, "p_value": res.p_value,
                "T_obs": res.T_obs, "runtime": time.perf_counter() - start}
    except Exception as exc:  # noqa: BLE001
        return {"c": c, "rep": rep, "ok": False, "error": repr(exc),
                "runtime": time.perf_counter() - start}


@dataclass
class PowerStudyResult:
    """Rejection rates per local-alternative scale."""

    c_grid: list
    alpha: float
    reps: int
    records: list
    runtimes: dict = field(default_factory=dict)

    def power_table(self):
        rows = []
        for c in self.c_grid:
            ps = np.array([r["p_value"] for r in self.records
                           if r["ok"] and r["c"] == c])
            power = float(np.mean(ps < self.alpha))
            rows.append({"c": c, "power": power,
                         "mc_se": float(np.sqrt(power * (1 - power) / ps.size)),
                         "reps": int(ps.size)})
        return rows


def run_power_study(c_grid, n, M, B, Q, reps, config, seed, alpha=0.05,
                    family_mode="percentile_line", frac_min=0.1, threads=1):
    """Size/power sweep of the subgroup test over local-alternative scales."""
    if reps < 1:
        raise StudyError("reps must be at least 1")
    start = time.perf_counter()
    tasks = [(float(c), n, M, ci, rep, config, B, Q, family_mode, frac_min, seed)
             for ci, c in enumerate(c_grid) for rep in range(reps)]
    records = pmap(_power_rep, tasks, threads=threads)
    failures = sum(0 if r["ok"] else 1 for r in records)
    if failures > 0.05 * len(records):
        raise StudyError(f"{failures}/{len(records)} replications failed")
    return PowerStudyResult(c_grid=[float(c) for c in c_grid], alpha=alpha,
                            reps=reps, records=records,
                            runtimes={"total": time.perf_counter() - start})
