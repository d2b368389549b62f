# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: Jacobi eigensolver, Cholesky and the
Mahalanobis-neighborhood moments used for covariance pseudo-labels.

Every function here has a numpy twin in ``_kernels_py`` with the same
signature and return values.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, fabs

cnp.import_array()

NAME = "cython"


def jacobi_eigh(a, double tol=1e-12, int max_sweeps=100):
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Returns ``(eigenvalues, eigenvectors, sweeps)`` with eigenvalues
    ascending. ``sweeps`` is -1 when the iteration cap was hit.
    """
    cdef double[:, ::1] A = np.array(a, dtype=np.float64, order="C", copy=True)
    cdef Py_ssize_t n = A.shape[0]
    V_arr = np.eye(n, dtype=np.float64)
    cdef double[:, ::1] V = V_arr
    cdef Py_ssize_t p, q, k
    cdef int sweep
    cdef double off, scale = 0.0, apq, theta, t, c, s, x, y
    cdef int converged = 0

    for p in range(n):
        for q in range(n):
            scale += A[p, q] * A[p, q]
    scale = sqrt(scale)

    for sweep in range(max_sweeps + 1):
        off = 0.0
        for p in range(n):
            for q in range(p + 1, n):
                off += A[p, q] * A[p, q]
        if sqrt(off) <= tol * scale:
            converged = 1
            break
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = 1.0 / (fabs(theta) + sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    x = A[k, p]
                    y = A[k, q]
                    A[k, p] = c * x - s * y
                    A[k, q] = s * x + c * y
                for k in range(n):
                    x = A[p, k]
                    y = A[q, k]
                    A[p, k] = c * x - s * y
                    A[q, k] = s * x + c * y
                A[p, q] = 0.0
                A[q, p] = 0.0
                for k in range(n):
                    x = V[k, p]
                    y = V[k, q]
                    V[k, p] = c * x - s * y
                    V[k, q] = s * x + c * y

    w = np.empty(n, dtype=np.float64)
    for p in range(n):
        w[p] = A[p, p]
    order = np.argsort(w, kind="stable")
    return w[order], V_arr[:, order], (sweep if converged else -1)


def cholesky_lower(a):
    """Lower Cholesky factor. Returns ``(L, bad_pivot)``; ``bad_pivot`` is -1
    on success, otherwise the index of the first non-positive pivot."""
    cdef double[:, ::1] A = np.ascontiguousarray(a, dtype=np.float64)
    cdef Py_ssize_t n = A.shape[0]
    L_arr = np.zeros((n, n), dtype=np.float64)
    cdef double[:, ::1] L = L_arr
    cdef Py_ssize_t i, j, k
    cdef double s
    for j in range(n):
        s = A[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not s > 0.0:
            return L_arr, j
        L[j, j] = sqrt(s)
        for i in range(j + 1, n):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / L[j, j]
    return L_arr, -1


cdef inline bint _worse(double da, Py_ssize_t ia, double db, Py_ssize_t ib) nogil:
    # lexicographic (distance, index) comparison: is a ranked after b?
    return da > db or (da == db and ia > ib)


cdef void _sift_down(double* hd, Py_ssize_t* hi, Py_ssize_t size, Py_ssize_t pos) nogil:
    cdef Py_ssize_t child, largest
    cdef double td
    cdef Py_ssize_t ti
    while True:
        largest = pos
        child = 2 * pos + 1
        if child < size and _worse(hd[child], hi[child], hd[largest], hi[largest]):
            largest = child
        child += 1
        if child < size and _worse(hd[child], hi[child], hd[largest], hi[largest]):
            largest = child
        if largest == pos:
            return
        td = hd[pos]; hd[pos] = hd[largest]; hd[largest] = td
        ti = hi[pos]; hi[pos] = hi[largest]; hi[largest] = ti
        pos = largest


def neighborhood_moments(z, y, Py_ssize_t k):
    """Softmax-weighted neighborhood mean and covariance for every row.

    ``z`` holds whitened inputs, so Euclidean distance in ``z`` equals the
    Mahalanobis distance in the original inputs. For each row the ``k``
    nearest rows get weights ``softmax(-d)``. Ties go to the lower index,
    except that the row itself outranks every other row at distance 0, so
    it is always in its own neighborhood.

    Returns ``(indices, distances, weights, means, covs)``.
    """
    cdef double[:, ::1] Z = np.ascontiguousarray(z, dtype=np.float64)
    cdef double[:, ::1] Y = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t N = Z.shape[0], m = Z.shape[1], n = Y.shape[1]
    idx_arr = np.empty((N, k), dtype=np.int64)
    dist_arr = np.empty((N, k), dtype=np.float64)
    w_arr = np.empty((N, k), dtype=np.float64)
    mu_arr = np.empty((N, n), dtype=np.float64)
    cov_arr = np.empty((N, n, n), dtype=np.float64)
    cdef cnp.int64_t[:, ::1] IDX = idx_arr
    cdef double[:, ::1] DIST = dist_arr
    cdef double[:, ::1] W = w_arr
    cdef double[:, ::1] MU = mu_arr
    cdef double[:, :, ::1] COV = cov_arr
    heap_d_arr = np.empty(k, dtype=np.float64)
    heap_i_arr = np.empty(k, dtype=np.intp)
    cdef double[::1] hd = heap_d_arr
    cdef Py_ssize_t[::1] hi = heap_i_arr
    cdef Py_ssize_t i, j, c, a, b, size, pos
    cdef double acc, diff, d, d0, s, wj, ra, rb

    with nogil:
        for i in range(N):
            size = 0
            for j in range(N):
                acc = 0.0
                for c in range(m):
                    diff = Z[j, c] - Z[i, c]
                    acc += diff * diff
                d = sqrt(acc)
                # the query sorts as index -1
                a = -1 if j == i else j
                if size < k:
                    # sift up
                    pos = size
                    size += 1
                    hd[pos] = d
                    hi[pos] = a
                    while pos > 0 and _worse(hd[pos], hi[pos], hd[(pos - 1) // 2], hi[(pos - 1) // 2]):
                        acc = hd[pos]; hd[pos] = hd[(pos - 1) // 2]; hd[(pos - 1) // 2] = acc
                        c = hi[pos]; hi[pos] = hi[(pos - 1) // 2]; hi[(pos - 1) // 2] = c
                        pos = (pos - 1) // 2
                elif _worse(hd[0], hi[0], d, a):
                    hd[0] = d
                    hi[0] = a
                    _sift_down(&hd[0], &hi[0], size, 0)
            # heap-sort into ascending (distance, index) order
            while size > 1:
                size -= 1
                acc = hd[0]; hd[0] = hd[size]; hd[size] = acc
                c = hi[0]; hi[0] = hi[size]; hi[size] = c
                _sift_down(&hd[0], &hi[0], size, 0)
            for j in range(k):
                IDX[i, j] = i if hi[j] == -1 else hi[j]
                DIST[i, j] = hd[j]

            d0 = DIST[i, 0]
            s = 0.0
            for j in range(k):
                W[i, j] = exp(d0 - DIST[i, j])
                s += W[i, j]
            for j in range(k):
                W[i, j] = W[i, j] / s

            for c in range(n):
                acc = 0.0
                for j in range(k):
                    acc += W[i, j] * Y[IDX[i, j], c]
                MU[i, c] = acc
            for a in range(n):
                for b in range(a, n):
                    acc = 0.0
                    for j in range(k):
                        wj = W[i, j]
                        ra = Y[IDX[i, j], a] - MU[i, a]
                        rb = Y[IDX[i, j], b] - MU[i, b]
                        acc += (wj * ra) * rb
                    COV[i, a, b] = acc
                    COV[i, b, a] = acc
    return idx_arr, dist_arr, w_arr, mu_arr, cov_arr
