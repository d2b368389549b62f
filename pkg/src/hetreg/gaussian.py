"""Closed-form divergences and distances between multivariate normals."""
from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import DegenerateCovariance, DimensionMismatch, NotPositiveDefinite


@dataclass(frozen=True)
class Gaussian:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = linalg.as_spd(np.atleast_2d(np.asarray(self.cov, dtype=np.float64)))
        if cov.shape != (mean.size, mean.size):
            raise DimensionMismatch(f"mean dim {mean.size} vs covariance {cov.shape}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self):
        return self.mean.size


@dataclass(frozen=True)
class SqrtGaussian:
    """Normal distribution parameterized by a symmetric square-root factor.

    The factor may be indefinite; the implied covariance ``S @ S`` is PSD
    regardless.
    """

    mean: np.ndarray
    sqrt_cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        s = linalg.as_spd(np.atleast_2d(np.asarray(self.sqrt_cov, dtype=np.float64)))
        if s.shape != (mean.size, mean.size):
            raise DimensionMismatch(f"mean dim {mean.size} vs factor {s.shape}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "sqrt_cov", s)

    @property
    def dim(self):
        return self.mean.size

    @property
    def cov(self):
        c = self.sqrt_cov @ self.sqrt_cov
        return 0.5 * (c + c.T)

    def to_gaussian(self):
        return Gaussian(self.mean, self.cov)


def _check_same_dim(a, b):
    if a.dim != b.dim:
        raise DimensionMismatch(f"dimensions differ: {a.dim} vs {b.dim}")


def gaussian_nll(y, pred):
    """``log|S| + (y - m)^T S^{-1} (y - m)`` with additive constants dropped."""
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if y.size != pred.dim:
        raise DimensionMismatch(f"target dim {y.size} vs prediction dim {pred.dim}")
    L = linalg.cholesky(pred.cov)
    z = linalg.solve_lower(L, y - pred.mean)
    return 2.0 * float(np.sum(np.log(np.diag(L)))) + float(z @ z)


def _logdet_p(cov):
    try:
        return linalg.logdet(cov)
    except NotPositiveDefinite as exc:
        raise DegenerateCovariance("covariance of p is singular") from exc


def kl_divergence(p, q):
    """``KL(p || q)`` between two normals (natural log)."""
    _check_same_dim(p, q)
    Lq = linalg.cholesky(q.cov)
    logdet_q = 2.0 * float(np.sum(np.log(np.diag(Lq))))
    logdet_p = _logdet_p(p.cov)
    a = linalg.solve_lower(Lq, linalg.cholesky(p.cov))
    z = linalg.solve_lower(Lq, q.mean - p.mean)
    kl = 0.5 * (float(np.sum(a * a)) + float(z @ z) - p.dim + logdet_q - logdet_p)
    return max(kl, 0.0)


def calibrated_kl(y, prior, pred):
    """KL from ``N(y, prior)`` to ``pred`` with the trace and residual terms halved.

    Minimizing it over the predicted covariance gives the average of the
    prior and the residual covariance instead of their sum.
    """
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    prior = linalg.as_spd(np.atleast_2d(prior))
    if y.size != pred.dim or prior.shape != (pred.dim, pred.dim):
        raise DimensionMismatch("target, prior and prediction dimensions disagree")
    L = linalg.cholesky(pred.cov)
    logdet_pred = 2.0 * float(np.sum(np.log(np.diag(L))))
    logdet_prior = _logdet_p(prior)
    a = linalg.solve_lower(L, linalg.cholesky(prior))
    z = linalg.solve_lower(L, pred.mean - y)
    k = pred.dim
    return 0.5 * ((float(np.sum(a * a)) + float(z @ z)) / 2.0 - k + logdet_pred - logdet_prior)


def calibrated_kl_minimizer(prior, residuals):
    """Stationary covariance of the calibrated objective: ``(prior + R) / 2``.

    ``R`` is the population covariance of ``residuals`` about zero, i.e. the
    rows are ``y_i - mean`` for a fixed predicted mean.
    """
    r = np.atleast_2d(np.asarray(residuals, dtype=np.float64))
    return 0.5 * (np.asarray(prior, dtype=np.float64) + r.T @ r / r.shape[0])


def kl_minimizer(prior, residuals):
    """Stationary covariance of the uncalibrated KL objective: ``prior + R``."""
    r = np.atleast_2d(np.asarray(residuals, dtype=np.float64))
    return np.asarray(prior, dtype=np.float64) + r.T @ r / r.shape[0]


def w2_exact(a, b):
    """Squared 2-Wasserstein distance between two normals.

    ``|m1 - m2|^2 + Tr[S1 + S2 - 2 (S2^{1/2} S1 S2^{1/2})^{1/2}]``
    """
    _check_same_dim(a, b)
    root_b = linalg.spd_sqrt(b.cov)
    cross = root_b @ a.cov @ root_b
    cross = linalg.spd_sqrt(0.5 * (cross + cross.T))
    dm = a.mean - b.mean
    trace_term = np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.trace(cross)
    return float(dm @ dm) + max(float(trace_term), 0.0)


def w2_bound(a, b):
    """Eigendecomposition-free upper bound on :func:`w2_exact`.

    ``|m1 - m2|^2 + ||S1 - S2||_F^2`` for square-root factors ``S1, S2``.
    """
    _check_same_dim(a, b)
    dm = a.mean - b.mean
    ds = a.sqrt_cov - b.sqrt_cov
    return float(dm @ dm) + float(np.sum(ds * ds))


def trace_root_gap(a, b):
    """``Tr[(A^{1/2} B A^{1/2})^{1/2}] - Tr(A^{1/2} B^{1/2})``; nonnegative for PD inputs."""
    a = linalg.as_spd(a)
    b = linalg.as_spd(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    ra = linalg.spd_sqrt(a)
    rb = linalg.spd_sqrt(b)
    inner = ra @ b @ ra
    return float(np.trace(linalg.spd_sqrt(0.5 * (inner + inner.T))) - np.trace(ra @ rb))


def transform_gaussian(g, r):
    """Push a normal through ``y -> R y``: mean ``R m``, covariance ``R S R^T``."""
    r = np.atleast_2d(np.asarray(r, dtype=np.float64))
    if r.shape != (g.dim, g.dim):
        raise DimensionMismatch(f"transform {r.shape} vs dim {g.dim}")
    return Gaussian(r @ g.mean, linalg.project_to_spd(r @ g.cov @ r.T, floor=0.0))


# -- batched evaluation --------------------------------------------------------
# Vectorized over a leading batch axis with LAPACK routines from numpy. These
# are for evaluation only (metrics over thousands of rows); the per-sample
# functions above are the reference they are tested against.


def _batch_sqrt(c):
    w, v = np.linalg.eigh(0.5 * (c + np.swapaxes(c, -1, -2)))
    return (v * np.sqrt(np.clip(w, 0.0, None))[..., None, :]) @ np.swapaxes(v, -1, -2)


def _batch_logdet(chol):
    return 2.0 * np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)), axis=-1)


def batch_gaussian_nll(y, mean, cov):
    L = np.linalg.cholesky(cov)
    z = np.linalg.solve(L, (y - mean)[..., None])[..., 0]
    return _batch_logdet(L) + np.sum(z * z, axis=-1)


def batch_kl_divergence(p_mean, p_cov, q_mean, q_cov):
    Lq = np.linalg.cholesky(q_cov)
    Lp = np.linalg.cholesky(p_cov)
    a = np.linalg.solve(Lq, Lp)
    z = np.linalg.solve(Lq, (q_mean - p_mean)[..., None])[..., 0]
    k = p_mean.shape[-1]
    kl = 0.5 * (np.sum(a * a, axis=(-2, -1)) + np.sum(z * z, axis=-1) - k + _batch_logdet(Lq) - _batch_logdet(Lp))
    return np.maximum(kl, 0.0)


def batch_w2_exact(a_mean, a_cov, b_mean, b_cov):
    root_b = _batch_sqrt(b_cov)
    cross = _batch_sqrt(root_b @ a_cov @ root_b)
    tr = lambda m: np.trace(m, axis1=-2, axis2=-1)  # noqa: E731
    dm = a_mean - b_mean
    return np.sum(dm * dm, axis=-1) + np.maximum(tr(a_cov) + tr(b_cov) - 2.0 * tr(cross), 0.0)
