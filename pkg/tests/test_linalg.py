"""Dense SPD kernels against LAPACK and textbook oracles."""
import itertools
import math

import numpy as np
import pytest
from scipy import linalg as sla

from conftest import random_spd
from hetreg import linalg
from hetreg.errors import DimensionMismatch, NotPositiveDefinite, NotSymmetric


def cofactor_det(a):
    """Laplace expansion along the first row (small matrices only)."""
    n = a.shape[0]
    if n == 1:
        return a[0, 0]
    return sum((-1) ** j * a[0, j] * cofactor_det(np.delete(np.delete(a, 0, 0), j, 1)) for j in range(n))


def bisect_eigenvalues(a):
    """Eigenvalues of a symmetric matrix by Sturm-count bisection on its
    Householder tridiagonal form (scipy.linalg.hessenberg)."""
    h = sla.hessenberg(a)
    d = np.diag(h).copy()
    e = np.diag(h, -1).copy()
    n = d.size

    def count_below(x):
        # number of eigenvalues < x from the LDL^T pivots of T - xI
        c, q = 0, 1.0
        for i in range(n):
            q = d[i] - x - (e[i - 1] ** 2 / q if i else 0.0)
            if q == 0.0:
                q = 1e-300
            c += q < 0
        return c

    bound = np.max(np.abs(d)) + 2 * (np.max(np.abs(e)) if n > 1 else 0.0) + 1.0
    out = []
    for k in range(n):
        lo, hi = -bound, bound
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if count_below(mid) > k:
                hi = mid
            else:
                lo = mid
        out.append(0.5 * (lo + hi))
    return np.array(out)


@pytest.mark.parametrize("n", [1, 2, 3, 5, 8, 16])
def test_eigenvalues_match_bisection(rng, n):
    # [DERIVED] Sturm-sequence bisection
    for _ in range(5):
        a = random_spd(rng, n)
        w, v = linalg.sym_eig(a)
        np.testing.assert_allclose(w, bisect_eigenvalues(a), rtol=1e-10, atol=1e-10 * np.abs(w).max())
        np.testing.assert_allclose(v @ np.diag(w) @ v.T, a, atol=1e-10 * np.abs(a).max())
        np.testing.assert_allclose(v.T @ v, np.eye(n), atol=1e-12)


def test_eigenvalues_ascending_and_indefinite(rng):
    a = rng.standard_normal((6, 6))
    a = a + a.T
    w, _ = linalg.sym_eig(a)
    assert np.all(np.diff(w) >= 0)
    np.testing.assert_allclose(w, np.linalg.eigvalsh(a), atol=1e-11)


def test_eig_handles_repeated_eigenvalues():
    q, _ = np.linalg.qr(np.random.default_rng(1).standard_normal((5, 5)))
    a = q @ np.diag([2.0, 2.0, 2.0, 5.0, 5.0]) @ q.T
    w, v = linalg.sym_eig(a)
    np.testing.assert_allclose(w, [2, 2, 2, 5, 5], atol=1e-12)
    np.testing.assert_allclose(v @ np.diag(w) @ v.T, a, atol=1e-12)


@pytest.mark.parametrize("n", [1, 2, 4, 7])
def test_cholesky_against_lapack_and_cofactor(rng, n):
    a = random_spd(rng, n)
    L = linalg.cholesky(a)
    np.testing.assert_allclose(L, np.linalg.cholesky(a), rtol=1e-12, atol=1e-12)
    assert np.all(np.triu(L, 1) == 0)
    # [DERIVED] log det via Laplace expansion
    assert linalg.logdet(a) == pytest.approx(math.log(cofactor_det(a)), rel=1e-10, abs=1e-10)


def test_cholesky_rejects_indefinite():
    with pytest.raises(NotPositiveDefinite):
        linalg.cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_as_spd_rejects_asymmetric_and_non_square():
    with pytest.raises(NotSymmetric):
        linalg.as_spd(np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(DimensionMismatch):
        linalg.as_spd(np.ones((2, 3)))


@pytest.mark.parametrize("n", [1, 3, 6])
def test_sqrt_matches_scipy_sqrtm(rng, n):
    a = random_spd(rng, n)
    s = linalg.spd_sqrt(a)
    np.testing.assert_allclose(s, np.real(sla.sqrtm(a)), rtol=1e-9, atol=1e-10)
    np.testing.assert_allclose(s, s.T, atol=0)


def test_inverse_and_solve(rng):
    a = random_spd(rng, 5)
    np.testing.assert_allclose(linalg.spd_inverse(a) @ a, np.eye(5), atol=1e-9)
    L = np.linalg.cholesky(a)
    b = rng.standard_normal((5, 3))
    np.testing.assert_allclose(linalg.solve_lower(L, b), sla.solve_triangular(L, b, lower=True), atol=1e-12)


def test_mahalanobis_matches_scipy(rng):
    from scipy.spatial.distance import mahalanobis

    p = linalg.spd_inverse(random_spd(rng, 4))
    u, v = rng.standard_normal(4), rng.standard_normal(4)
    assert linalg.mahalanobis(u, v, p) == pytest.approx(mahalanobis(u, v, p), rel=1e-12)


def test_weighted_covariance_uniform_is_population_cov(rng):
    pts = rng.standard_normal((50, 3))
    mean, cov = linalg.weighted_covariance(pts, np.full(50, 1 / 50))
    np.testing.assert_allclose(mean, pts.mean(0), atol=1e-14)
    np.testing.assert_allclose(cov, np.cov(pts.T, bias=True), atol=1e-13)


def test_weighted_covariance_matches_numpy_aweights(rng):
    pts = rng.standard_normal((40, 2))
    w = rng.random(40)
    w /= w.sum()
    _, cov = linalg.weighted_covariance(pts, w)
    np.testing.assert_allclose(cov, np.cov(pts.T, aweights=w, bias=True), atol=1e-13)


def test_weighted_covariance_rejects_bad_weights():
    with pytest.raises(ValueError):
        linalg.weighted_covariance(np.zeros((2, 2)), np.array([0.7, 0.7]))


def test_project_to_spd(rng):
    a = rng.standard_normal((5, 5))
    p = linalg.project_to_spd(a)
    w = np.linalg.eigvalsh(p)
    assert w.min() > 0
    # idempotent, bit for bit
    assert np.array_equal(linalg.project_to_spd(p), p)
    # SPD input untouched (symmetrized only)
    s = random_spd(rng, 4)
    np.testing.assert_array_equal(linalg.project_to_spd(s), 0.5 * (s + s.T))


def test_project_to_spd_explicit_floor():
    a = np.diag([-1.0, 0.5, 3.0])
    np.testing.assert_allclose(linalg.project_to_spd(a, floor=1.0), np.diag([1.0, 1.0, 3.0]), atol=1e-14)


def test_eig_counter_is_scoped():
    with linalg.count_eig_calls() as c:
        linalg.spd_sqrt(np.eye(3))
        linalg.sym_eig(np.eye(2))
        linalg.cholesky(np.eye(2))
    assert c.calls == 2
    with linalg.count_eig_calls() as c2:
        pass
    assert c2.calls == 0


def test_random_spd_is_pd():
    rng = np.random.default_rng(0)
    for n, _ in itertools.product([1, 4, 16], range(3)):
        assert np.linalg.eigvalsh(linalg.random_spd(rng, n)).min() > 0
