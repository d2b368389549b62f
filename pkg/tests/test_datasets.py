"""Synthetic generators, preprocessing and CSV I/O."""
import numpy as np
import pytest

from hetreg import datasets as D
from hetreg.errors import ParseError, TooFewColumns, TooFewSamples, UnknownVariant


def test_multivariate_schur_matches_conditional_sampling():
    # [DERIVED] resample Y at one fixed x; the spread must match Schur + noise
    ds, model = D.gen_multivariate(4, 200, seed=2, return_model=True)
    rng = np.random.default_rng(0)
    x = ds.inputs[0]
    n = 200_000
    L = np.linalg.cholesky(model.cov_y_given_x)
    y = rng.standard_normal((n, 4)) @ L.T + np.sqrt(model.noise_variances(x[None]))[0] * rng.standard_normal((n, 4))
    emp = np.cov(y.T)
    assert np.linalg.norm(emp - ds.gt_cov[0]) / np.linalg.norm(ds.gt_cov[0]) < 0.05


def test_multivariate_joint_conditional_formula():
    # [DERIVED] condition a jointly sampled (X, Y) on a thin slab around x0
    _, model = D.gen_multivariate(2, 10, seed=5, return_model=True)
    rng = np.random.default_rng(1)
    joint_cov = np.block([[model.cov_xx, model.cov_xx @ model.gain.T],
                          [model.gain @ model.cov_xx, model.cov_y_given_x + model.gain @ model.cov_xx @ model.gain.T]])
    mean = np.concatenate([model.mean_x, model.mean_y])
    s = rng.multivariate_normal(mean, joint_cov, 2_000_000)
    x0 = model.mean_x
    keep = np.all(np.abs(s[:, :2] - x0) < 0.05 * np.sqrt(np.diag(model.cov_xx)), axis=1)
    ys = s[keep, 2:]
    assert keep.sum() > 2000
    np.testing.assert_allclose(ys.mean(0), model.conditional_mean(x0[None])[0], atol=4 * ys.std(0).max() / np.sqrt(keep.sum()) + 0.01)
    assert np.linalg.norm(np.cov(ys.T) - model.cov_y_given_x) / np.linalg.norm(model.cov_y_given_x) < 0.1


def test_multivariate_ground_truth_pd_and_deterministic():
    a = D.gen_multivariate(8, 500, seed=4)
    b = D.gen_multivariate(8, 500, seed=4)
    assert np.array_equal(a.targets, b.targets) and np.array_equal(a.gt_cov, b.gt_cov)
    assert np.linalg.eigvalsh(a.gt_cov).min() > 0
    assert not np.array_equal(a.targets, D.gen_multivariate(8, 500, seed=5).targets)


def test_sample_count_schedule():
    assert D.multivariate_sample_count(4) == 4000
    assert D.multivariate_sample_count(32) == 20000
    with pytest.raises(TooFewSamples):
        D.gen_multivariate(8, 10)


@pytest.mark.parametrize("variant", [1, 2, 3])
def test_sinusoid_residual_variance(variant):
    ds = D.gen_sinusoid(variant, 100_000, seed=0)
    r = (ds.targets - ds.gt_mean)[:, 0]
    # E[x^2] for x ~ U[-5, 5] is 25 / 3
    assert np.mean(r**2) == pytest.approx(25 / 3, rel=0.02)
    z = r / np.abs(ds.inputs[:, 0])
    assert np.std(z) == pytest.approx(1.0, rel=0.02)


def test_sinusoid_unknown_variant():
    with pytest.raises(UnknownVariant):
        D.gen_sinusoid(4, 10)


def test_bivariate_problem_is_correlated():
    for seed in range(20):
        p = D.gen_bivariate_p1(seed)
        c = p.target.cov
        assert abs(c[0, 1]) / np.sqrt(c[0, 0] * c[1, 1]) > 0.5
        np.testing.assert_array_equal(p.init.cov, np.eye(2))
        y = p.sampler(100_000, np.random.default_rng(0))
        np.testing.assert_allclose(np.cov(y.T), c, rtol=0.05, atol=0.02 * np.trace(c))


def test_split_is_partition():
    ds = D.gen_sinusoid(1, 1000, seed=0)
    tr, te = D.train_test_split(ds, 0.2, seed=1)
    assert len(tr) == 800 and len(te) == 200
    both = np.sort(np.concatenate([tr.inputs[:, 0], te.inputs[:, 0]]))
    np.testing.assert_array_equal(both, np.sort(ds.inputs[:, 0]))


def test_standardize_idempotent_and_invertible():
    ds = D.gen_multivariate(4, 300, seed=0)
    s1, st = D.standardize(ds)
    np.testing.assert_allclose(s1.inputs.mean(0), 0, atol=1e-12)
    np.testing.assert_allclose(s1.targets.std(0), 1, atol=1e-12)
    s2, _ = D.standardize(s1)
    np.testing.assert_allclose(s2.targets, s1.targets, atol=1e-12)
    back = st.invert(s1)
    np.testing.assert_allclose(back.targets, ds.targets, atol=1e-12)
    np.testing.assert_allclose(back.gt_cov, ds.gt_cov, atol=1e-12)


def test_standardize_constant_column():
    ds = D.RegressionDataset(np.c_[np.arange(5.0), np.ones(5)], np.arange(5.0)[:, None])
    s, st = D.standardize(ds)
    np.testing.assert_array_equal(s.inputs[:, 1], np.ones(5))
    assert st.input_std[1] == 1.0


def test_feature_split():
    table = np.arange(40.0).reshape(5, 8)
    ds = D.feature_split(table, 0.25, seed=0)
    assert ds.input_dim == 2 and ds.target_dim == 6
    assert sorted(np.r_[ds.inputs[0], ds.targets[0]]) == list(table[0])
    with pytest.raises(TooFewColumns):
        D.feature_split(np.ones((3, 1)))


def test_csv_round_trip_exact(tmp_path):
    rng = np.random.default_rng(0)
    vals = np.r_[rng.standard_normal(20) * 10.0 ** rng.integers(-300, 300, 20), 0.1, 1 / 3, -0.0]
    path = tmp_path / "t.csv"
    D.write_csv(path, ["a"], [[v] for v in vals])
    back = D.load_csv(path, has_header=True)[:, 0]
    assert np.array_equal(back, vals)


def test_csv_parse_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("1,2\n3,x\n")
    with pytest.raises(ParseError) as exc:
        D.load_csv(p)
    assert (exc.value.row, exc.value.col) == (2, 2)
    p.write_text("1,2\n3\n")
    with pytest.raises(ParseError) as exc:
        D.load_csv(p)
    assert exc.value.row == 2
