"""Dense SPD linear algebra.

Matrices are plain ``float64`` numpy arrays. Symmetric positive
(semi-)definite inputs are checked with :func:`as_spd`; eigendecompositions
and Cholesky factorizations run on the kernel backend selected in
``hetreg._backend``.

Every call to :func:`sym_eig` (and therefore :func:`spd_sqrt`) bumps a
per-thread counter, read through :func:`eig_call_count` or the
:func:`count_eig_calls` context manager. Training code paths are expected to
leave it untouched.
"""
import contextlib
import threading
from typing import NamedTuple

import numpy as np

from ._backend import kernels
from .errors import (
    ConvergenceFailure,
    DimensionMismatch,
    NotPositiveDefinite,
    NotSymmetric,
)

EIG_TOL = 1e-12
EIG_MAX_SWEEPS = 100
RIDGE = 1e-6

_counter = threading.local()


def eig_call_count():
    return getattr(_counter, "value", 0)


def _bump():
    _counter.value = eig_call_count() + 1


class EigCounter:
    """Eigendecomposition calls observed inside a :func:`count_eig_calls` block."""

    def __init__(self):
        self._start = eig_call_count()
        self._stop = None

    @property
    def calls(self):
        stop = self._stop if self._stop is not None else eig_call_count()
        return stop - self._start


@contextlib.contextmanager
def count_eig_calls():
    """Count :func:`sym_eig` / :func:`spd_sqrt` calls made in this thread.

    >>> with count_eig_calls() as counter:
    ...     _ = spd_sqrt(np.eye(2))
    >>> counter.calls
    1
    """
    counter = EigCounter()
    try:
        yield counter
    finally:
        counter._stop = eig_call_count()


class EigenPair(NamedTuple):
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def _square(a, name="a"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {a.shape}")
    return a


def as_spd(a, check_finite=True):
    """Validate symmetry of ``a`` and return an exactly symmetric copy.

    Symmetry is accepted when ``|a_ij - a_ji| <= 1e-10 (1 + |a_ij|)``.
    Positive semi-definiteness is not checked here since that would need an
    eigendecomposition; :func:`cholesky` and :func:`project_to_spd` handle it.
    """
    a = _square(a)
    if check_finite and not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    if np.any(np.abs(a - a.T) > 1e-10 * (1.0 + np.abs(a))):
        raise NotSymmetric("matrix is not symmetric")
    return 0.5 * (a + a.T)


def random_spd(rng, dim, jitter=1e-3):
    """``M^T M + jitter I`` with standard normal ``M``."""
    m = rng.standard_normal((dim, dim))
    return m.T @ m + jitter * np.eye(dim)


def cholesky(a):
    """Lower-triangular ``L`` with ``L L^T = a``.

    Raises
    ------
    NotPositiveDefinite
        When a pivot is not strictly positive.
    """
    a = _square(a)
    L, bad = kernels.cholesky_lower(a)
    if bad >= 0:
        raise NotPositiveDefinite(f"non-positive pivot at index {bad}", pivot=bad)
    return L


def sym_eig(a):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns an :class:`EigenPair` with ascending eigenvalues and orthonormal
    eigenvector columns.
    """
    a = as_spd(a)
    _bump()
    if a.shape[0] == 0:
        return EigenPair(np.zeros(0), np.zeros((0, 0)))
    w, v, sweeps = kernels.jacobi_eigh(a, EIG_TOL, EIG_MAX_SWEEPS)
    if sweeps < 0:
        raise ConvergenceFailure(f"Jacobi did not converge in {EIG_MAX_SWEEPS} sweeps")
    return EigenPair(w, v)


def _from_eig(vals, vecs):
    out = (vecs * vals) @ vecs.T
    return 0.5 * (out + out.T)


def spd_sqrt(a):
    """Symmetric PSD square root. Eigenvalues below zero (roundoff) are clamped."""
    w, v = sym_eig(a)
    return _from_eig(np.sqrt(np.clip(w, 0.0, None)), v)


def spd_inverse(a):
    """Inverse of a strictly positive definite matrix via its Cholesky factor."""
    a = as_spd(a)
    L = cholesky(a)
    n = a.shape[0]
    linv = solve_lower(L, np.eye(n))
    inv = linv.T @ linv
    return 0.5 * (inv + inv.T)


def solve_lower(L, b):
    """Forward substitution ``L x = b`` for lower-triangular ``L``.

    ``b`` may be a vector or a matrix (columns solved together). The loop runs
    over rows in a fixed order, so results are reproducible bit for bit.
    """
    L = np.asarray(L, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    x = np.array(b, dtype=np.float64, copy=True)
    for i in range(L.shape[0]):
        acc = x[i]
        for j in range(i):
            acc = acc - L[i, j] * x[j]
        x[i] = acc / L[i, i]
    return x


def logdet(a):
    """``log det a`` as ``2 sum log L_ii`` of the Cholesky factor."""
    L = cholesky(a)
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def mahalanobis(u, v, precision):
    """``sqrt((u - v)^T P (u - v))`` for a precision matrix ``P``."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    precision = np.asarray(precision, dtype=np.float64)
    if u.shape != v.shape or precision.shape != (u.size, u.size):
        raise DimensionMismatch(
            f"shapes {u.shape}, {v.shape} and precision {precision.shape} do not agree"
        )
    d = u - v
    return float(np.sqrt(max(d @ precision @ d, 0.0)))


def weighted_covariance(points, weights):
    """Weighted mean and population covariance of the rows of ``points``.

    Parameters
    ----------
    points : array (N, n)
    weights : array (N,)
        Nonnegative, summing to one within 1e-10.

    Returns
    -------
    mean : array (n,)
    cov : array (n, n)
        ``sum_i w_i (y_i - mean)(y_i - mean)^T``; symmetric PSD.
    """
    points = np.asarray(points, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64).ravel()
    if points.ndim != 2 or points.shape[0] != weights.size:
        raise DimensionMismatch(
            f"{points.shape[0] if points.ndim == 2 else points.shape} points vs {weights.size} weights"
        )
    if points.shape[0] == 0:
        raise DimensionMismatch("need at least one point")
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-10:
        raise ValueError("weights must be nonnegative and sum to 1")
    mean = weights @ points
    r = points - mean
    cov = (weights[:, None] * r).T @ r
    return mean, 0.5 * (cov + cov.T)


def _self_consistent_floor(w, ratio):
    """Floor ``f`` with ``f = ratio * mean(max(w, f))`` for ascending ``w``.

    Clipping raises the trace, so a floor tied to the input trace would move
    on a second projection. Tying it to the output trace removes that drift.
    """
    n = w.size
    for m in range(n + 1):
        rest = float(np.sum(w[m:]))
        denom = n - ratio * m
        f = ratio * rest / denom
        if f > 0.0 and (m == 0 or w[m - 1] < f) and (m == n or f <= w[m]):
            return f
    return 0.0


def project_to_spd(a, floor=None):
    """Nearest symmetric matrix with eigenvalues at least ``floor``.

    ``a`` is symmetrized first. ``floor`` defaults to ``1e-6 * trace / dim``
    of the result (0 when that trace is not positive). Inputs whose
    eigenvalues already clear the floor (up to 1e-12 relative slack) are
    returned unchanged, which makes the projection exactly idempotent.
    """
    a = _square(a)
    sym = 0.5 * (a + a.T)
    n = sym.shape[0]
    if n == 0:
        return sym
    w, v = sym_eig(sym)
    if floor is None:
        floor = _self_consistent_floor(w, RIDGE)
    slack = 1e-12 * max(np.max(np.abs(w)), abs(floor))
    if w[0] >= floor - slack:
        return sym
    return _from_eig(np.maximum(w, floor), v)
