"""Neighborhood covariance labels against the naive reference and scipy."""
import numpy as np
import pytest
from scipy.spatial.distance import cdist

from hetreg import pseudolabel as pl
from hetreg._backend import available_backends, get_kernels
from hetreg.datasets import RegressionDataset, gen_multivariate, gen_sinusoid
from hetreg.errors import KOutOfRange, TooFewSamples

BACKENDS = available_backends()


def random_ds(seed, N=100, m=None, n=None, dup=False):
    rng = np.random.default_rng(seed)
    m = m or int(rng.integers(1, 4))
    n = n or int(rng.integers(1, 4))
    x = rng.standard_normal((N, m)) @ rng.standard_normal((m, m))
    if dup:
        x[N // 2:] = x[: N - N // 2]
    return RegressionDataset(x, rng.standard_normal((N, n)))


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("seed", range(20))
def test_kernels_equal_reference_bitwise(backend, seed):
    ds = random_ds(seed, dup=seed % 4 == 0)
    k = min(10 * ds.target_dim, len(ds))
    labels = pl.pseudo_labels(ds, k, kernels=get_kernels(backend))
    idx, d, w, mu, cov = pl.reference_rows(ds, k)
    assert np.array_equal(labels.indices, idx)
    assert np.array_equal(labels.distances, d)
    assert np.array_equal(labels.weights, w)
    assert np.array_equal(labels.mean, mu)
    assert np.array_equal(labels.cov, cov)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled kernels not built")
def test_backends_agree_on_larger_problem():
    ds = gen_multivariate(4, 1500, seed=3)
    a = pl.pseudo_labels(ds, kernels=get_kernels("cython"))
    b = pl.pseudo_labels(ds, kernels=get_kernels("python"))
    for field in ("indices", "distances", "weights", "mean", "cov", "sqrt_cov"):
        assert np.array_equal(getattr(a, field), getattr(b, field)), field


def test_neighbors_match_scipy_mahalanobis():
    # [DERIVED] scipy cdist with VI = inverse ridged input covariance
    ds = random_ds(5, N=80, m=3, n=2)
    D = cdist(ds.inputs, ds.inputs, "mahalanobis", VI=np.linalg.inv(pl.input_covariance(ds)))
    k = 12
    labels = pl.pseudo_labels(ds, k)
    for i in range(len(ds)):
        assert labels.indices[i, 0] == i
        np.testing.assert_allclose(labels.distances[i], D[i, labels.indices[i]], atol=1e-10)
        np.testing.assert_allclose(labels.distances[i], np.sort(D[i])[:k], atol=1e-10)
        # same neighbor set unless the k-th and (k+1)-th distances are a near tie
        srt = np.sort(D[i])
        if srt[k] - srt[k - 1] > 1e-9:
            assert set(labels.indices[i]) == set(np.argsort(D[i])[:k])


def test_knn_mahalanobis_helper_agrees():
    ds = random_ds(2, N=60, m=2, n=1)
    prec = np.linalg.inv(pl.input_covariance(ds))
    labels = pl.pseudo_labels(ds, 7)
    for i in (0, 17, 59):
        idx, d = pl.knn_mahalanobis(ds, i, 7, prec)
        assert np.array_equal(idx, labels.indices[i])
        np.testing.assert_allclose(d, labels.distances[i], atol=1e-12)


def test_weights_softmax_of_negative_distance():
    ds = random_ds(8)
    labels = pl.pseudo_labels(ds, 15)
    d = labels.distances
    ref = np.exp(-d) / np.exp(-d).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(labels.weights, ref, rtol=1e-12)
    np.testing.assert_allclose(labels.weights.sum(1), 1.0, atol=1e-12)
    assert np.all(np.diff(labels.weights, axis=1) <= 1e-15)


def test_labels_are_psd_and_sqrt_squares_back():
    ds = random_ds(9, m=2, n=3)
    labels = pl.pseudo_labels(ds, 30)
    for c, s in zip(labels.cov, labels.sqrt_cov):
        assert np.linalg.eigvalsh(c).min() >= -1e-12
        np.testing.assert_allclose(s @ s, c, atol=1e-10)


def test_k1_gives_zero_covariance():
    ds = random_ds(10)
    labels = pl.pseudo_labels(ds, 1)
    assert np.all(labels.cov == 0)
    np.testing.assert_array_equal(labels.mean, ds.targets)


def test_row_permutation_equivariance():
    ds = random_ds(11, m=2, n=2)
    perm = np.random.default_rng(0).permutation(len(ds))
    a = pl.pseudo_labels(ds, 20)
    b = pl.pseudo_labels(ds.subset(perm), 20)
    np.testing.assert_allclose(b.cov, a.cov[perm], atol=1e-12)


def test_diagonal_input_scaling_keeps_neighbors():
    ds = random_ds(12, m=3, n=2)
    scaled = RegressionDataset(ds.inputs * np.array([1e3, 0.01, 7.0]), ds.targets)
    a = pl.pseudo_labels(ds, 20, ridge=0.0)
    b = pl.pseudo_labels(scaled, 20, ridge=0.0)
    assert np.array_equal(a.indices, b.indices)


def test_homoscedastic_recovery():
    rng = np.random.default_rng(0)
    N = 20_000
    sigma0 = np.array([[1.0, 0.4], [0.4, 0.5]])
    x = rng.standard_normal((N, 1))
    y = np.hstack([np.sin(x), 0.5 * x]) + rng.multivariate_normal([0, 0], sigma0, N)
    labels = pl.pseudo_labels(RegressionDataset(x, y))
    avg = labels.cov.mean(0)
    assert np.linalg.norm(avg - sigma0) / np.linalg.norm(sigma0) < 0.10


def test_heteroscedastic_tracks_true_variance():
    ds = gen_sinusoid(1, 5000, seed=0)
    labels = pl.pseudo_labels(ds)
    true_sd = np.abs(ds.inputs[:, 0])
    assert np.corrcoef(np.sqrt(labels.cov[:, 0, 0]), true_sd)[0, 1] > 0.9


def test_export_round_trip(tmp_path):
    labels = pl.pseudo_labels(random_ds(13, m=2, n=3), 12)
    path = tmp_path / "labels.csv"
    pl.export_labels(labels, path)
    back = pl.load_labels(path)
    assert np.array_equal(back.mean, labels.mean)
    assert np.array_equal(back.cov, labels.cov)
    assert np.array_equal(back.sqrt_cov, labels.sqrt_cov)


def test_errors():
    ds = random_ds(14)
    with pytest.raises(KOutOfRange):
        pl.pseudo_labels(ds, 0)
    with pytest.raises(KOutOfRange):
        pl.pseudo_labels(ds, len(ds) + 1)
    with pytest.raises(TooFewSamples):
        pl.pseudo_labels(ds.subset([0]), 1)
