"""Dataset and parameter containers, coefficient-function evaluation, CSV loading.

A :class:`FunctionalDataset` holds responses on one shared grid plus the
scalar covariates, the subgroup covariates (as column indices into ``X``),
and the change-plane covariates.  All containers are immutable after
construction and safe to share across workers.
"""

import csv
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ValidationError
from .kernels import kernel_section

#: Tolerance used when matching per-subject grids loaded from long CSVs.
GRID_MATCH_TOL = 1e-12


@dataclass(frozen=True)
class FunctionalDataset:
    """Responses ``Y[i, m]`` observed at ``grid[m]`` with per-subject covariates.

    ``xtilde_idx`` selects the columns of ``X`` that carry the subgroup
    effect.  ``Z2`` always has an all-ones first column acting as the
    intercept of the change-plane index ``Z1 + Z2 @ gamma``.
    """

    Y: np.ndarray
    X: np.ndarray
    xtilde_idx: tuple
    Z1: np.ndarray
    Z2: np.ndarray
    grid: np.ndarray
    s_offset: float = 0.0
    s_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "Y", np.asarray(self.Y, dtype=float))
        object.__setattr__(self, "X", np.asarray(self.X, dtype=float))
        object.__setattr__(self, "Z1", np.asarray(self.Z1, dtype=float))
        object.__setattr__(self, "Z2", np.asarray(self.Z2, dtype=float))
        object.__setattr__(self, "grid", np.asarray(self.grid, dtype=float))
        object.__setattr__(self, "xtilde_idx", tuple(int(j) for j in self.xtilde_idx))
        n, m = self.Y.shape
        p = self.X.shape[1]
        d = len(self.xtilde_idx)
        q = self.Z2.shape[1]
        if not 1 <= d <= p:
            raise ValidationError(f"need 1 <= d <= p, got d={d}, p={p}")
        if any(j < 0 or j >= p for j in self.xtilde_idx):
            raise ValidationError("xtilde_idx out of range")
        if len(set(self.xtilde_idx)) != d:
            raise ValidationError("xtilde_idx has duplicates")
        if self.X.shape[0] != n or self.Z1.shape != (n,) or self.Z2.shape[0] != n:
            raise ValidationError("covariate row counts do not match responses")
        if self.grid.shape != (m,):
            raise ValidationError("grid length does not match response columns")
        if not np.array_equal(self.Z2[:, 0], np.ones(n)):
            raise ValidationError("first column of Z2 must be the all-ones intercept")
        for name, arr in (("Y", self.Y), ("X", self.X), ("Z1", self.Z1),
                          ("Z2", self.Z2), ("grid", self.grid)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} contains non-finite values")
        if np.any(np.diff(self.grid) <= 0):
            raise ValidationError("grid must be strictly increasing")
        if self.grid[0] < -GRID_MATCH_TOL or self.grid[-1] > 1 + GRID_MATCH_TOL:
            raise ValidationError("grid must lie in [0, 1]; rescale at load time")
        if n < p + d + q:
            raise ValidationError(f"need n >= p + d + q = {p + d + q}, got n={n}")

    @property
    def n(self):
        return self.Y.shape[0]

    @property
    def n_grid(self):
        return self.Y.shape[1]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def d(self):
        return len(self.xtilde_idx)

    @property
    def q(self):
        return self.Z2.shape[1]

    @property
    def Xt(self):
        """Subgroup covariates, the selected columns of ``X``."""
        return self.X[:, list(self.xtilde_idx)]

    def original_s(self, s=None):
        """Map grid values back to the scale of the input file."""
        if s is None:
            s = self.grid
        return self.s_offset + self.s_scale * np.asarray(s, dtype=float)


def membership(dataset, gamma):
    """Boolean subgroup labels ``Z1 + Z2 @ gamma > 0``."""
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (dataset.q,):
        raise ValidationError(f"gamma must have length q={dataset.q}")
    return dataset.Z1 + dataset.Z2 @ gamma > 0


@dataclass(frozen=True)
class CoefficientFunctions:
    """Representer coefficients for the fitted coefficient functions.

    Rows of ``b`` and ``c`` hold the kernel-expansion coefficients of the
    main-effect functions and the subgroup-effect functions; evaluation at
    ``s`` contracts them against the kernel section at ``s``.
    """

    b: np.ndarray
    c: np.ndarray
    kernel: "object"

    @property
    def beta_grid(self):
        """Main-effect functions evaluated at the grid, shape (p, M)."""
        return self.b @ self.kernel.gram

    @property
    def delta_grid(self):
        """Subgroup-effect functions evaluated at the grid, shape (d, M)."""
        return self.c @ self.kernel.gram


def evaluate_theta(theta, s):
    """Evaluate all coefficient functions at ``s``.

    Returns the ``p + d`` values ``(beta_1(s), ..., delta_d(s))``; for a
    vector of points the result has shape ``(p + d, len(s))``.
    """
    ks = kernel_section(s, theta.kernel)
    vals = np.concatenate([theta.b @ ks.T if ks.ndim > 1 else theta.b @ ks,
                           theta.c @ ks.T if ks.ndim > 1 else theta.c @ ks])
    return vals


@dataclass(frozen=True)
class FitConfig:
    """Tuning state for the change-plane estimator.

    ``h=None`` resolves to the default bandwidth ``n**-0.5 * log(n)`` at fit
    time.  ``lambda_cov=None`` reuses ``lam`` for the covariance smoothing
    ridge.
    """

    lam: float = 0.01
    h: float = None
    kernel_nu: float = 0.2
    max_iter: int = 50
    tol: float = 1e-6
    gamma_init: tuple = None
    lambda_grid: tuple = None
    cv_folds: int = 5
    cv_seed: int = 0
    lambda_cov: float = None
    gamma_box: tuple = (-5.0, 5.0)
    screen_points: int = 256
    nm_restarts: int = 5
    search_mode: str = "lhs_nm"
    grid_points: int = 41
    search_seed: int = 0

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigurationError("lam must be positive")
        if self.h is not None and not self.h > 0:
            raise ConfigurationError("h must be positive")
        if not self.kernel_nu > 0:
            raise ConfigurationError("kernel_nu must be positive")
        if not self.tol > 0:
            raise ConfigurationError("tol must be positive")
        if self.max_iter < 1:
            raise ConfigurationError("max_iter must be at least 1")
        if self.cv_folds < 2:
            raise ConfigurationError("cv_folds must be at least 2")
        if self.search_mode not in ("lhs_nm", "grid"):
            raise ConfigurationError(f"unknown search_mode: {self.search_mode!r}")
        if not (len(self.gamma_box) == 2 and self.gamma_box[0] < self.gamma_box[1]):
            raise ConfigurationError("gamma_box must be (low, high) with low < high")
        if self.gamma_init is not None:
            object.__setattr__(self, "gamma_init", tuple(float(g) for g in self.gamma_init))
        if self.lambda_grid is not None:
            grid = tuple(float(v) for v in self.lambda_grid)
            if any(v <= 0 for v in grid):
                raise ConfigurationError("lambda_grid values must be positive")
            object.__setattr__(self, "lambda_grid", grid)

    def resolve_h(self, n):
        if self.h is not None:
            return float(self.h)
        return float(np.log(n) / np.sqrt(n))


@dataclass(frozen=True)
class ChangePlaneFit:
    """Fitted coefficients, grouping parameter, and convergence diagnostics."""

    theta: CoefficientFunctions
    gamma: np.ndarray
    loss_trace: np.ndarray
    converged: bool
    n_iter: int
    weighted: bool
    lam: float
    h: float

    @property
    def d_vec(self):
        """Stacked representer coefficients ``(b_1, ..., b_p, c_1, ..., c_d)``."""
        return np.concatenate([self.theta.b.ravel(), self.theta.c.ravel()])


_X_COL = re.compile(r"^x(\d+)$")
_Z2_COL = re.compile(r"^z2_(\d+)$")


@dataclass(frozen=True)
class DatasetSchema:
    """Names the covariate columns that carry the subgroup effect."""

    xtilde: tuple = ("x1",)

    def __post_init__(self):
        object.__setattr__(self, "xtilde", tuple(self.xtilde))
        if not self.xtilde:
            raise ConfigurationError("schema must select at least one xtilde column")


def _read_csv(path):
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            rows = list(reader)
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise ValidationError(f"{path} is empty")
    return rows[0], rows[1:]


def _parse_float(token, path, row_idx, col_name):
    try:
        value = float(token)
    except ValueError as exc:
        raise ValidationError(
            f"{path}: row {row_idx}, column {col_name!r}: not a number: {token!r}"
        ) from exc
    if not np.isfinite(value):
        raise ValidationError(
            f"{path}: row {row_idx}, column {col_name!r}: non-finite value"
        )
    return value


def load_dataset(responses_path, covariates_path, schema):
    """Load a :class:`FunctionalDataset` from the two-file CSV format.

    ``responses_path`` is long format with columns ``subject_id, s, y`` on a
    common grid (matched to tolerance 1e-12 after sorting).  ``covariates_path``
    is wide with columns ``subject_id, x1..xp, z1, z2_1..z2_{q-1}``; the Z2
    intercept is prepended automatically.  Grids outside [0, 1] are affinely
    rescaled and the transform recorded on the dataset.
    """
    header, rows = _read_csv(covariates_path)
    cols = {name: j for j, name in enumerate(header)}
    for required in ("subject_id", "z1"):
        if required not in cols:
            raise ValidationError(f"{covariates_path}: missing column {required!r}")
    x_names = sorted((m.group(0) for m in map(_X_COL.match, header) if m),
                     key=lambda s: int(s[1:]))
    z2_names = sorted((m.group(0) for m in map(_Z2_COL.match, header) if m),
                      key=lambda s: int(s.split("_")[1]))
    if not x_names:
        raise ValidationError(f"{covariates_path}: no x1..xp columns found")
    missing = [name for name in schema.xtilde if name not in x_names]
    if missing:
        raise ValidationError(f"{covariates_path}: schema xtilde columns not present: {missing}")

    subject_order = []
    x_rows, z1_vals, z2_rows = [], [], []
    for r, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise ValidationError(f"{covariates_path}: row {r} has {len(row)} fields, expected {len(header)}")
        sid = row[cols["subject_id"]]
        if sid in subject_order:
            raise ValidationError(f"{covariates_path}: duplicate subject_id {sid!r} at row {r}")
        subject_order.append(sid)
        x_rows.append([_parse_float(row[cols[name]], covariates_path, r, name) for name in x_names])
        z1_vals.append(_parse_float(row[cols["z1"]], covariates_path, r, "z1"))
        z2_rows.append([_parse_float(row[cols[name]], covariates_path, r, name) for name in z2_names])

    header_r, rows_r = _read_csv(responses_path)
    cols_r = {name: j for j, name in enumerate(header_r)}
    for required in ("subject_id", "s", "y"):
        if required not in cols_r:
            raise ValidationError(f"{responses_path}: missing column {required!r}")
    per_subject = {sid: [] for sid in subject_order}
    for r, row in enumerate(rows_r, start=2):
        if len(row) != len(header_r):
            raise ValidationError(f"{responses_path}: row {r} has {len(row)} fields, expected {len(header_r)}")
        sid = row[cols_r["subject_id"]]
        if sid not in per_subject:
            raise ValidationError(f"{responses_path}: row {r}: unknown subject_id {sid!r}")
        s = _parse_float(row[cols_r["s"]], responses_path, r, "s")
        y = _parse_float(row[cols_r["y"]], responses_path, r, "y")
        per_subject[sid].append((s, y))

    ref_sid = subject_order[0]
    ref = sorted(per_subject[ref_sid])
    m = len(ref)
    if m < 2:
        raise ValidationError(f"{responses_path}: subject {ref_sid!r} has fewer than 2 grid points")
    grid = np.array([s for s, _ in ref])
    y_mat = np.empty((len(subject_order), m))
    for i, sid in enumerate(subject_order):
        obs = sorted(per_subject[sid])
        if len(obs) != m:
            raise ValidationError(
                f"{responses_path}: ragged grid: subject {sid!r} has {len(obs)} points, expected {m}"
            )
        s_i = np.array([s for s, _ in obs])
        if np.max(np.abs(s_i - grid)) > GRID_MATCH_TOL:
            raise ValidationError(
                f"{responses_path}: subject {sid!r} grid does not match the common grid "
                f"(tolerance {GRID_MATCH_TOL})"
            )
        y_mat[i] = [y for _, y in obs]

    s_offset, s_scale = 0.0, 1.0
    if grid[0] < 0.0 or grid[-1] > 1.0:
        s_offset = float(grid[0])
        s_scale = float(grid[-1] - grid[0])
        if s_scale <= 0:
            raise ValidationError(f"{responses_path}: degenerate grid range")
        grid = (grid - s_offset) / s_scale

    X = np.asarray(x_rows, dtype=float)
    Z2 = np.hstack([np.ones((len(subject_order), 1)), np.asarray(z2_rows, dtype=float).reshape(len(subject_order), -1)])
    xtilde_idx = tuple(x_names.index(name) for name in schema.xtilde)
    return FunctionalDataset(
        Y=y_mat, X=X, xtilde_idx=xtilde_idx, Z1=np.asarray(z1_vals), Z2=Z2,
        grid=grid, s_offset=s_offset, s_scale=s_scale,
    )
