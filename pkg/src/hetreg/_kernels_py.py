"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

The eigensolver here uses the parallel (round-robin) ordering of Jacobi
rotations so that each round is a handful of whole-matrix numpy operations
instead of a Python loop per rotation.
"""
import math

import numpy as np

NAME = "python"


def _round_robin(n):
    """Yield ``(p, q)`` index arrays of disjoint pairs covering all pairs once."""
    m = n + (n % 2)
    players = list(range(m))
    for _ in range(m - 1):
        p, q = [], []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a < n and b < n:
                p.append(min(a, b))
                q.append(max(a, b))
        yield np.array(p, dtype=np.intp), np.array(q, dtype=np.intp)
        players = [players[0], players[-1]] + players[1:-1]


def jacobi_eigh(a, tol=1e-12, max_sweeps=100):
    A = np.array(a, dtype=np.float64, copy=True)
    n = A.shape[0]
    V = np.eye(n)
    scale = np.sqrt(np.sum(A * A))
    schedule = list(_round_robin(n)) if n > 1 else []
    converged = False
    sweep = 0
    for sweep in range(max_sweeps + 1):
        off = np.sqrt(np.sum(np.triu(A, 1) ** 2))
        if off <= tol * scale:
            converged = True
            break
        if sweep == max_sweeps:
            break
        for p, q in schedule:
            apq = A[p, q]
            active = apq != 0.0
            if not np.any(active):
                continue
            safe = np.where(active, apq, 1.0)
            theta = (A[q, q] - A[p, p]) / (2.0 * safe)
            t = 1.0 / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t = np.where(theta < 0.0, -t, t)
            c = np.where(active, 1.0 / np.sqrt(t * t + 1.0), 1.0)
            s = np.where(active, t * c, 0.0)
            J = np.eye(n)
            J[p, p] = c
            J[q, q] = c
            J[p, q] = s
            J[q, p] = -s
            A = J.T @ A @ J
            A[p, q] = 0.0
            A[q, p] = 0.0
            V = V @ J
    w = np.diag(A).copy()
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order], (sweep if converged else -1)


def cholesky_lower(a):
    A = np.asarray(a, dtype=np.float64)
    n = A.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        s = A[j, j] - L[j, :j] @ L[j, :j]
        if not s > 0.0:
            return L, j
        L[j, j] = math.sqrt(s)
        L[j + 1:, j] = (A[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L, -1


def neighborhood_moments(z, y, k):
    Z = np.ascontiguousarray(z, dtype=np.float64)
    Y = np.ascontiguousarray(y, dtype=np.float64)
    N, m = Z.shape
    n = Y.shape[1]
    idx_out = np.empty((N, k), dtype=np.int64)
    dist_out = np.empty((N, k))
    w_out = np.empty((N, k))
    mu_out = np.empty((N, n))
    cov_out = np.empty((N, n, n))
    upper = np.triu_indices(n)
    for i in range(N):
        acc = np.zeros(N)
        for c in range(m):
            diff = Z[:, c] - Z[i, c]
            acc += diff * diff
        d = np.sqrt(acc)
        if k < N:
            kth = np.partition(d, k - 1)[k - 1]
            cand = np.flatnonzero(d <= kth)
        else:
            cand = np.arange(N)
        # lexsort keys: last is primary; the query sorts as index -1
        cand = cand[np.lexsort((np.where(cand == i, -1, cand), d[cand]))][:k]
        dk = d[cand]
        d0 = dk[0]
        e = [math.exp(d0 - dj) for dj in dk.tolist()]
        s = 0.0
        for ej in e:
            s += ej
        w = np.array([ej / s for ej in e])
        mu = np.zeros(n)
        for j in range(k):
            mu += w[j] * Y[cand[j]]
        cov = np.zeros((n, n))
        for j in range(k):
            r = Y[cand[j]] - mu
            cov += np.outer(w[j] * r, r)
        sym = np.zeros((n, n))
        sym[upper] = cov[upper]
        sym.T[upper] = cov[upper]
        idx_out[i] = cand
        dist_out[i] = dk
        w_out[i] = w
        mu_out[i] = mu
        cov_out[i] = sym
    return idx_out, dist_out, w_out, mu_out, cov_out
