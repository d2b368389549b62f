"""Covariance pseudo-labels from Mahalanobis-weighted input neighborhoods.

For every training row the ``k`` nearest rows in Mahalanobis distance
(``Sigma = Cov(X)``) are collected, the row itself included. Their targets
are weighted by ``softmax(-d)`` so closer rows count more, and the weighted
mean and covariance of those targets become the row's label.
"""
import math
from dataclasses import dataclass

import numpy as np

from . import linalg
from ._backend import kernels as _default_kernels
from .datasets import format_float, load_csv, write_csv
from .errors import DimensionMismatch, KOutOfRange, TooFewSamples


@dataclass(frozen=True)
class PseudoLabelSet:
    mean: np.ndarray  # (N, n)
    cov: np.ndarray  # (N, n, n)
    sqrt_cov: np.ndarray  # (N, n, n)
    indices: np.ndarray  # (N, k), ascending distance
    distances: np.ndarray  # (N, k)
    weights: np.ndarray  # (N, k)
    repaired: int = 0  # rows whose covariance needed clamping of roundoff negatives

    def __len__(self):
        return self.mean.shape[0]

    @property
    def k(self):
        return self.indices.shape[1]


def default_k(target_dim):
    return 10 * target_dim


def input_covariance(ds, ridge=linalg.RIDGE):
    """Population covariance of the inputs plus ``ridge * trace / dim`` on the diagonal."""
    if len(ds) < 2:
        raise TooFewSamples("input covariance needs at least two rows")
    w = np.full(len(ds), 1.0 / len(ds))
    _, cov = linalg.weighted_covariance(ds.inputs, w)
    m = cov.shape[0]
    return cov + ridge * max(np.trace(cov) / m, 0.0) * np.eye(m)


def whiten(inputs, cov):
    """Rows mapped to ``L^{-1} x`` with ``L L^T = cov``.

    Euclidean distances between whitened rows are Mahalanobis distances
    under ``cov``. The substitution runs column by column in a fixed order.
    """
    L = linalg.cholesky(cov)
    x = np.asarray(inputs, dtype=np.float64)
    z = np.empty_like(x)
    for c in range(x.shape[1]):
        acc = x[:, c].copy()
        for b in range(c):
            acc = acc - L[c, b] * z[:, b]
        z[:, c] = acc / L[c, c]
    return z


def knn_mahalanobis(ds, query_row, k, precision):
    """The ``k`` rows closest to ``query_row`` in Mahalanobis distance.

    Returns ``(indices, distances)`` sorted by distance; equal distances are
    ordered by row index, except that the query outranks every other row
    at distance 0.
    """
    n = len(ds)
    if not 1 <= k <= n:
        raise KOutOfRange(f"k must be in [1, {n}], got {k}")
    precision = np.asarray(precision, dtype=np.float64)
    m = ds.input_dim
    if precision.shape != (m, m):
        raise DimensionMismatch(f"precision {precision.shape} vs input dim {m}")
    diff = ds.inputs - ds.inputs[query_row]
    d = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", diff, precision, diff), 0.0))
    rank = np.arange(n)
    rank[query_row] = -1
    order = np.lexsort((rank, d))[:k]
    return order, d[order]


def _check_k(ds, k):
    if len(ds) < 2:
        raise TooFewSamples("pseudo-labels need at least two rows")
    if not 1 <= k <= len(ds):
        raise KOutOfRange(f"k must be in [1, {len(ds)}], got {k}")


def _sqrt_all(cov):
    out = np.empty_like(cov)
    repaired = 0
    for i in range(cov.shape[0]):
        w, v = linalg.sym_eig(cov[i])
        if w[0] < 0.0:
            repaired += 1
        out[i] = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
        out[i] = 0.5 * (out[i] + out[i].T)
    return out, repaired


def pseudo_labels(ds, k=None, ridge=linalg.RIDGE, kernels=None):
    """Neighborhood covariance pseudo-label for every row of ``ds``.

    Parameters
    ----------
    ds : RegressionDataset
        Training rows only; test rows must not be passed in.
    k : int, optional
        Neighborhood size, default ``10 * target_dim``.
    ridge : float
        Relative ridge added to ``Cov(X)`` before inversion.
    kernels : module, optional
        Kernel backend override (``hetreg._backend.get_kernels(name)``).
    """
    k = default_k(ds.target_dim) if k is None else int(k)
    _check_k(ds, k)
    kern = _default_kernels if kernels is None else kernels
    z = whiten(ds.inputs, input_covariance(ds, ridge))
    idx, dist, w, mu, cov = kern.neighborhood_moments(z, ds.targets, k)
    sqrt_cov, repaired = _sqrt_all(cov)
    return PseudoLabelSet(mu, cov, sqrt_cov, idx, dist, w, repaired)


def reference_rows(ds, k, rows=None, ridge=linalg.RIDGE):
    """Naive double-loop evaluation of the neighborhood moments.

    Plain Python scalars throughout; used as the oracle for the kernels.
    Returns ``(indices, distances, weights, means, covs)`` for ``rows``
    (default: all rows).
    """
    _check_k(ds, k)
    z = whiten(ds.inputs, input_covariance(ds, ridge)).tolist()
    y = ds.targets.tolist()
    N, n = len(z), len(y[0])
    rows = range(N) if rows is None else rows
    out_idx, out_d, out_w, out_mu, out_cov = [], [], [], [], []
    for i in rows:
        d = []
        for j in range(N):
            acc = 0.0
            for c in range(len(z[0])):
                diff = z[j][c] - z[i][c]
                acc += diff * diff
            d.append(math.sqrt(acc))
        nbr = sorted(range(N), key=lambda j: (d[j], -1 if j == i else j))[:k]
        dk = [d[j] for j in nbr]
        e = [math.exp(dk[0] - dj) for dj in dk]
        s = 0.0
        for ej in e:
            s += ej
        w = [ej / s for ej in e]
        mu = []
        for c in range(n):
            acc = 0.0
            for j in range(k):
                acc += w[j] * y[nbr[j]][c]
            mu.append(acc)
        cov = [[0.0] * n for _ in range(n)]
        for a in range(n):
            for b in range(a, n):
                acc = 0.0
                for j in range(k):
                    acc += (w[j] * (y[nbr[j]][a] - mu[a])) * (y[nbr[j]][b] - mu[b])
                cov[a][b] = acc
                cov[b][a] = acc
        out_idx.append(nbr)
        out_d.append(dk)
        out_w.append(w)
        out_mu.append(mu)
        out_cov.append(cov)
    return (
        np.array(out_idx, dtype=np.int64),
        np.array(out_d),
        np.array(out_w),
        np.array(out_mu),
        np.array(out_cov),
    )


def _upper_pairs(n):
    return [(a, b) for a in range(n) for b in range(a, n)]


def label_columns(n):
    pairs = _upper_pairs(n)
    return (
        ["row_index"]
        + [f"mu_{c}" for c in range(n)]
        + [f"cov_{a}{b}" if n <= 10 else f"cov_{a}_{b}" for a, b in pairs]
        + [f"sqrt_{a}{b}" if n <= 10 else f"sqrt_{a}_{b}" for a, b in pairs]
    )


def export_labels(pl, path):
    """One CSV row per sample: index, mean, upper triangle of cov, upper triangle of sqrt."""
    n = pl.mean.shape[1]
    rows_a, cols_a = np.triu_indices(n)
    rows = []
    for i in range(len(pl)):
        rows.append(
            [i]
            + [format_float(v) for v in pl.mean[i]]
            + [format_float(v) for v in pl.cov[i][rows_a, cols_a]]
            + [format_float(v) for v in pl.sqrt_cov[i][rows_a, cols_a]]
        )
    write_csv(path, label_columns(n), rows)


def load_labels(path):
    """Inverse of :func:`export_labels`; neighbor bookkeeping is not stored."""
    table = load_csv(path, has_header=True)
    width = table.shape[1]
    # 1 + n + 2 * n(n+1)/2 = width  ->  n^2 + 2n + 1 - width = 0
    n = int(round(math.sqrt(width) - 1))
    if 1 + n + n * (n + 1) != width:
        raise DimensionMismatch(f"{width} columns is not a pseudo-label table")
    tri = n * (n + 1) // 2
    r, c = np.triu_indices(n)
    N = table.shape[0]
    mean = table[:, 1:1 + n]
    cov = np.zeros((N, n, n))
    sq = np.zeros((N, n, n))
    cov[:, r, c] = table[:, 1 + n:1 + n + tri]
    cov[:, c, r] = table[:, 1 + n:1 + n + tri]
    sq[:, r, c] = table[:, 1 + n + tri:]
    sq[:, c, r] = table[:, 1 + n + tri:]
    empty = np.zeros((N, 0))
    return PseudoLabelSet(mean, cov, sq, empty.astype(np.int64), empty, empty)
