"""Synthetic generators, standardization and CSV ingestion."""
import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import linalg
from .errors import (
    DimensionMismatch,
    ParseError,
    TooFewColumns,
    TooFewSamples,
    UnknownVariant,
)
from .gaussian import Gaussian

SINUSOID_RANGE = 5.0
SINUSOID_SAMPLES = 50_000


@dataclass
class RegressionDataset:
    """Inputs ``X`` (N, m) and targets ``Y`` (N, n).

    When the generating distribution is known, ``gt_mean`` (N, n) and
    ``gt_cov`` (N, n, n) hold the ground-truth normal for every row.
    """

    inputs: np.ndarray
    targets: np.ndarray
    gt_mean: Optional[np.ndarray] = None
    gt_cov: Optional[np.ndarray] = None

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=np.float64))
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise DimensionMismatch(
                f"{self.inputs.shape[0]} input rows vs {self.targets.shape[0]} target rows"
            )
        if self.inputs.shape[0] < 1:
            raise TooFewSamples("dataset is empty")
        if not (np.all(np.isfinite(self.inputs)) and np.all(np.isfinite(self.targets))):
            raise ValueError("dataset has non-finite entries")
        if (self.gt_mean is None) != (self.gt_cov is None):
            raise ValueError("gt_mean and gt_cov must be given together")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def input_dim(self):
        return self.inputs.shape[1]

    @property
    def target_dim(self):
        return self.targets.shape[1]

    @property
    def has_ground_truth(self):
        return self.gt_mean is not None

    def ground_truth(self, i):
        return Gaussian(self.gt_mean[i], self.gt_cov[i])

    def subset(self, rows):
        rows = np.asarray(rows)
        return RegressionDataset(
            self.inputs[rows],
            self.targets[rows],
            None if self.gt_mean is None else self.gt_mean[rows],
            None if self.gt_cov is None else self.gt_cov[rows],
        )


def train_test_split(ds, test_fraction=0.2, seed=0):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ds))
    n_test = int(round(test_fraction * len(ds)))
    return ds.subset(np.sort(perm[n_test:])), ds.subset(np.sort(perm[:n_test]))


# -- Problem 1: a single bivariate normal -------------------------------------


@dataclass(frozen=True)
class BivariateProblem:
    target: Gaussian
    init: Gaussian
    sampler: Callable[[int, np.random.Generator], np.ndarray]


def gen_bivariate_p1(seed):
    """Random strongly correlated bivariate target and an identity-covariance start.

    The target mean is uniform in ``[-3, 3]^2``; its covariance ``M^T M +
    1e-3 I`` is redrawn until the absolute correlation exceeds 0.5. The
    starting distribution has a different random mean and covariance ``I``.
    """
    rng = np.random.default_rng(seed)
    mean = rng.uniform(-3.0, 3.0, size=2)
    while True:
        cov = linalg.random_spd(rng, 2)
        rho = cov[0, 1] / math.sqrt(cov[0, 0] * cov[1, 1])
        if abs(rho) > 0.5:
            break
    init_mean = rng.uniform(-3.0, 3.0, size=2)
    target = Gaussian(mean, cov)
    factor = np.linalg.cholesky(cov)

    def sampler(n, gen):
        return mean + gen.standard_normal((n, 2)) @ factor.T

    return BivariateProblem(target, Gaussian(init_mean, np.eye(2)), sampler)


# -- Univariate sinusoids ------------------------------------------------------


def sinusoid_mean(variant, x):
    x = np.asarray(x, dtype=np.float64)
    wave = np.sin(2.0 * np.pi * x)
    if variant == 1:
        return np.abs(x) * wave
    if variant == 2:
        return (SINUSOID_RANGE - np.abs(x)) * wave
    if variant == 3:
        return SINUSOID_RANGE * wave
    raise UnknownVariant(f"sinusoid variant must be 1, 2 or 3, got {variant!r}")


def sinusoid_std(x):
    return np.abs(np.asarray(x, dtype=np.float64))


def gen_sinusoid(variant, n=SINUSOID_SAMPLES, seed=0):
    """``x ~ U[-5, 5]``, ``y = f_variant(x) + |x| eps``."""
    if variant not in (1, 2, 3):
        raise UnknownVariant(f"sinusoid variant must be 1, 2 or 3, got {variant!r}")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-SINUSOID_RANGE, SINUSOID_RANGE, size=n)
    mu = sinusoid_mean(variant, x)
    sd = sinusoid_std(x)
    y = mu + sd * rng.standard_normal(n)
    return RegressionDataset(x[:, None], y[:, None], mu[:, None], (sd**2)[:, None, None])


# -- Multivariate joint-Gaussian suite ----------------------------------------


def multivariate_sample_count(dim):
    """4000 samples at dim 4 rising linearly to 20000 at dim 32."""
    return int(round(4000 + (dim - 4) * (20000 - 4000) / 28))


@dataclass(frozen=True)
class MultivariateModel:
    """Joint normal over ``(X, Y)`` plus input-dependent diagonal noise."""

    mean_x: np.ndarray
    mean_y: np.ndarray
    cov_xx: np.ndarray
    gain: np.ndarray  # Sigma_YX Sigma_XX^{-1}
    cov_y_given_x: np.ndarray
    noise_weights: np.ndarray

    def conditional_mean(self, x):
        return self.mean_y + (x - self.mean_x) @ self.gain.T

    def noise_variances(self, x):
        return np.logaddexp(0.0, x @ self.noise_weights.T)


def make_multivariate_model(dim, rng):
    joint = linalg.random_spd(rng, 2 * dim) / (2 * dim)
    mean = rng.uniform(-1.0, 1.0, size=2 * dim)
    sxx = joint[:dim, :dim]
    sxy = joint[:dim, dim:]
    syy = joint[dim:, dim:]
    gain = np.linalg.solve(sxx, sxy).T
    schur = syy - gain @ sxy
    return MultivariateModel(
        mean_x=mean[:dim],
        mean_y=mean[dim:],
        cov_xx=sxx,
        gain=gain,
        cov_y_given_x=0.5 * (schur + schur.T),
        noise_weights=rng.standard_normal((dim, dim)) / math.sqrt(dim),
    )


def gen_multivariate(dim, n=None, seed=0, return_model=False):
    """Heteroscedastic multivariate targets with known per-row covariance.

    ``(X, Y)`` is jointly normal with a random SPD covariance; ``Y | X`` is
    the Schur-complement conditional plus independent noise with covariance
    ``diag(softplus(W x))``.
    """
    if dim < 2:
        raise ValueError("dim must be at least 2")
    n = multivariate_sample_count(dim) if n is None else int(n)
    if n < 2 * dim:
        raise TooFewSamples(f"need at least {2 * dim} samples for dim {dim}")
    rng = np.random.default_rng(seed)
    model = make_multivariate_model(dim, rng)
    x = model.mean_x + rng.standard_normal((n, dim)) @ np.linalg.cholesky(model.cov_xx).T
    mu = model.conditional_mean(x)
    cond_factor = np.linalg.cholesky(model.cov_y_given_x)
    noise_var = model.noise_variances(x)
    y = (
        mu
        + rng.standard_normal((n, dim)) @ cond_factor.T
        + np.sqrt(noise_var) * rng.standard_normal((n, dim))
    )
    cov = model.cov_y_given_x[None, :, :] + noise_var[:, :, None] * np.eye(dim)[None]
    ds = RegressionDataset(x, y, mu, cov)
    return (ds, model) if return_model else ds


# -- Preprocessing -------------------------------------------------------------


@dataclass(frozen=True)
class Standardizer:
    input_mean: np.ndarray
    input_std: np.ndarray
    target_mean: np.ndarray
    target_std: np.ndarray

    def apply(self, ds):
        return _affine(ds, self.input_mean, self.input_std, self.target_mean, self.target_std)

    def invert(self, ds):
        return _affine(
            ds,
            -self.input_mean / self.input_std,
            1.0 / self.input_std,
            -self.target_mean / self.target_std,
            1.0 / self.target_std,
        )


def _affine(ds, xm, xs, ym, ys):
    out = RegressionDataset((ds.inputs - xm) / xs, (ds.targets - ym) / ys)
    if ds.has_ground_truth:
        scale = 1.0 / ys
        out.gt_mean = (ds.gt_mean - ym) * scale
        out.gt_cov = ds.gt_cov * scale[None, :, None] * scale[None, None, :]
    return out


def _column_stats(a):
    mean = a.mean(axis=0)
    std = a.std(axis=0)
    constant = ~(std > 0)
    std = np.where(constant, 1.0, std)
    mean = np.where(constant, 0.0, mean)
    return mean, std


def standardize(ds):
    """Zero-mean, unit-variance columns for inputs and targets.

    Constant columns are left untouched and get a recorded std of 1. Returns
    ``(standardized dataset, Standardizer)``.
    """
    if len(ds) < 2:
        raise TooFewSamples("standardize needs at least two rows")
    xm, xs = _column_stats(ds.inputs)
    ym, ys = _column_stats(ds.targets)
    st = Standardizer(xm, xs, ym, ys)
    return st.apply(ds), st


def feature_split(table, fraction=0.25, seed=0):
    """Randomly use ``round(fraction * cols)`` columns (at least one) as inputs."""
    table = np.atleast_2d(np.asarray(table, dtype=np.float64))
    cols = table.shape[1]
    if cols < 2:
        raise TooFewColumns(f"need at least 2 columns, got {cols}")
    n_obs = min(max(1, int(math.floor(fraction * cols + 0.5))), cols - 1)
    perm = np.random.default_rng(seed).permutation(cols)
    obs = np.sort(perm[:n_obs])
    tgt = np.sort(perm[n_obs:])
    return RegressionDataset(table[:, obs], table[:, tgt])


# -- CSV -----------------------------------------------------------------------


def load_csv(path, has_header=False):
    """Parse a rectangular numeric CSV into a float matrix.

    Raises :class:`ParseError` with 1-based file row and column for malformed
    or missing cells.
    """
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, record in enumerate(csv.reader(fh), start=1):
            if has_header and lineno == 1:
                continue
            if not record or all(not cell.strip() for cell in record):
                continue
            if width is None:
                width = len(record)
            elif len(record) != width:
                raise ParseError(f"expected {width} cells, found {len(record)}", lineno, min(len(record), width) + 1)
            values = []
            for col, cell in enumerate(record, start=1):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise ParseError(f"cannot parse {cell!r} as a number", lineno, col) from None
            rows.append(values)
    if not rows:
        return np.zeros((0, width or 0))
    return np.array(rows, dtype=np.float64)


def format_float(x):
    """Shortest repr that round-trips exactly (at most 17 significant digits)."""
    return repr(float(x))


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else (str(v) if isinstance(v, (int, np.integer)) else format_float(v)) for v in row])
