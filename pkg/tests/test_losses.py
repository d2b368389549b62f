"""Training objectives, heads, optimizer and the training loop."""
import numpy as np
import pytest

from conftest import random_spd
from hetreg import autodiff as ad
from hetreg import gaussian, linalg
from hetreg.datasets import gen_multivariate, gen_sinusoid
from hetreg.errors import MissingGroundTruth
from hetreg.losses import (
    LOSS_NAMES,
    Batch,
    LossKind,
    Schedule,
    build_loss,
    init_model,
    label_arrays,
    loss_grad_check,
    make_spec,
    random_loss_problem,
    train,
)
from hetreg.nn import AdamW, CovHead, MLP, MLPConfig, load_checkpoint, save_checkpoint


def per_row_predictions(model, batch):
    mu, cov = model.predict(batch.x)
    return mu, cov


@pytest.mark.parametrize("name", LOSS_NAMES)
@pytest.mark.parametrize("dim", [1, 2, 4, 8])
def test_loss_gradients(name, dim):
    rng = np.random.default_rng(hash((name, dim)) % 2**32)
    for _ in range(3):
        model, batch = random_loss_problem(name, dim, rng)
        assert loss_grad_check(name, model, batch) <= 1e-4


def test_nll_full_matches_scalar_nll(rng):
    model, batch = random_loss_problem("NLL_full", 3, rng)
    mu, cov = per_row_predictions(model, batch)
    ref = np.mean([gaussian.gaussian_nll(batch.y[i], gaussian.Gaussian(mu[i], cov[i])) for i in range(len(mu))])
    assert float(build_loss(LossKind("NLL_full"), batch, model.mean_net, model.cov_net, model.head).value) == pytest.approx(ref, rel=1e-12)


def test_w2_bound_matches_scalar_bound(rng):
    model, batch = random_loss_problem("W2_bound", 3, rng)
    mu = model.mean_net(ad.Tensor(batch.x)).value
    S = model.head.factor(model.cov_net(ad.Tensor(batch.x))).value
    ref = np.mean([gaussian.w2_bound(gaussian.SqrtGaussian(batch.y[i], batch.label_sqrt[i]),
                                     gaussian.SqrtGaussian(mu[i], S[i])) for i in range(len(mu))])
    assert float(build_loss(LossKind("W2_bound"), batch, model.mean_net, model.cov_net, model.head).value) == pytest.approx(ref, rel=1e-12)


def test_kl_calibrated_matches_scalar(rng):
    model, batch = random_loss_problem("KL_calibrated", 3, rng)
    mu, cov = per_row_predictions(model, batch)
    ref = np.mean([gaussian.calibrated_kl(batch.y[i], batch.label_sqrt[i] @ batch.label_sqrt[i], gaussian.Gaussian(mu[i], cov[i]))
                   for i in range(len(mu))])
    assert float(build_loss(LossKind("KL_calibrated"), batch, model.mean_net, model.cov_net, model.head).value) == pytest.approx(ref, rel=1e-10)


def grads(kind, model, batch):
    for p in model.params():
        p.grad = None
    loss = build_loss(kind, batch, model.mean_net, model.cov_net, model.head)
    loss.backward()
    return float(loss.value), [np.zeros_like(p.value) if p.grad is None else p.grad.copy() for p in model.params()]


def test_beta_zero_equals_diagonal_nll(rng):
    model, batch = random_loss_problem("NLL_diag", 3, rng)
    v0, g0 = grads(LossKind("NLL_diag"), model, batch)
    v1, g1 = grads(LossKind("BetaNLL", 0.0), model, batch)
    assert v0 == v1
    for a, b in zip(g0, g1):
        np.testing.assert_array_equal(a, b)


def test_faithful_mean_gradient_is_mse(rng):
    model, batch = random_loss_problem("Faithful", 2, rng)
    _, g = grads(LossKind("Faithful"), model, batch)
    for p in model.params():
        p.grad = None
    mu = model.mean_net(ad.Tensor(batch.x))
    ad.mean(ad.reduce_sum(ad.square(ad.sub(ad.Tensor(batch.y), mu)), axis=-1)).backward()
    for p, gp in zip(model.mean_net.params, g[: len(model.mean_net.params)]):
        np.testing.assert_allclose(gp, p.grad, rtol=1e-12, atol=1e-15)


def test_w2_covariance_gradient_ignores_targets(rng):
    model, batch = random_loss_problem("W2_bound", 2, rng)
    _, g = grads(LossKind("W2_bound"), model, batch)
    shifted = Batch(batch.x, batch.y + 5.0, batch.label_sqrt, batch.prior_logdet)
    _, g2 = grads(LossKind("W2_bound"), model, shifted)
    k = len(model.mean_net.params)
    for a, b in zip(g[k:], g2[k:]):
        np.testing.assert_array_equal(a, b)


def test_label_logdet(rng):
    S = np.stack([linalg.spd_sqrt(random_spd(rng, 3)) for _ in range(4)])
    np.testing.assert_allclose(label_arrays(S), [np.linalg.slogdet(s @ s)[1] for s in S], rtol=1e-10)
    # repeated labels take the deduplicated path
    np.testing.assert_allclose(label_arrays(np.repeat(S[:1], 5, axis=0)), np.full(5, label_arrays(S[:1])[0]))
    assert np.isfinite(label_arrays(np.zeros((1, 2, 2)))).all()


@pytest.mark.parametrize("kind", CovHead.KINDS)
def test_heads_give_psd_and_identity_start(kind, rng):
    head = CovHead(kind, 3)
    np.testing.assert_allclose(head.covariance(head.identity_raw()[None])[0], np.eye(3), atol=1e-12)
    cov = head.covariance(rng.standard_normal((20, head.raw_dim)))
    assert np.linalg.eigvalsh(cov).min() >= -1e-12
    if kind != "sym_sqrt":
        assert np.linalg.eigvalsh(cov).min() > 0


def test_adamw_matches_hand_update():
    p = ad.parameter(np.array([1.0, -2.0]))
    opt = AdamW([p], lr=0.1, weight_decay=0.01)
    g = np.array([0.5, 0.25])
    p.grad = g
    opt.step()
    # first step: m_hat = g, v_hat = g^2 -> step = lr * sign(g) (up to eps)
    expected = np.array([1.0, -2.0]) * (1 - 0.1 * 0.01) - 0.1 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(p.value, expected, rtol=1e-12)


def test_glorot_init_bounds():
    cfg = MLPConfig(3, 2, 2, 40)
    net = MLP.init(cfg, np.random.default_rng(0))
    for (fi, fo), w in zip(zip(cfg.widths[:-1], cfg.widths[1:]), net.params[::2]):
        assert np.abs(w.value).max() <= np.sqrt(6 / (fi + fo))
    assert all(np.all(b.value == 0) for b in net.params[1::2])


def test_checkpoint_round_trip(tmp_path):
    model = init_model(make_spec("NLL_full", 2, 2, hidden_layers=2, hidden_width=5))
    path = tmp_path / "ck.npz"
    save_checkpoint(path, {"mean": model.mean_net, "cov": model.cov_net})
    nets = load_checkpoint(path)
    x = np.random.default_rng(0).standard_normal((4, 2))
    np.testing.assert_array_equal(nets["cov"](ad.Tensor(x)).value, model.cov_net(ad.Tensor(x)).value)


def small_run(loss, epochs=2, **kw):
    ds = gen_multivariate(4, 400, seed=1)
    spec = make_spec(loss, 4, 4, hidden_layers=2, hidden_width=16, activation="elu", epochs=epochs, seed=3, **kw)
    from hetreg.experiments import select_labels

    return train(ds, spec, select_labels(spec, ds), record_timing=False, record_memory=False)


@pytest.mark.parametrize("name", LOSS_NAMES)
def test_training_is_deterministic_and_eig_free(name):
    a, b = small_run(name), small_run(name)
    assert a.eig_calls == 0
    assert a.log == b.log
    assert len(a.log) == 2 and not a.diverged


def test_initial_models_shared_across_losses():
    x = np.ones((1, 4))
    m1 = init_model(make_spec("W2_bound", 4, 4, seed=5))
    m2 = init_model(make_spec("NLL_full", 4, 4, seed=5))
    np.testing.assert_array_equal(m1.predict(x)[0], m2.predict(x)[0])
    # the output bias alone encodes the identity covariance
    for m in (m1, m2):
        np.testing.assert_allclose(m.head.covariance(m.cov_net.params[-1].value[None])[0], np.eye(4), atol=1e-9)


def test_problem1_starts_at_identity():
    from hetreg.experiments import problem1_spec

    for loss in ("W2_bound", "NLL_full"):
        _, cov = init_model(problem1_spec(loss)).predict(np.zeros((1, 1)))
        np.testing.assert_allclose(cov[0], np.eye(2), atol=1e-12)


def test_schedules_run():
    r = small_run("NLL_full", epochs=4, schedule=Schedule("warmup", mean_only_fraction=0.5))
    assert len(r.log) == 4
    r = small_run("W2_bound", epochs=4, schedule=Schedule("hybrid", switch_epoch=2))
    assert r.model.head.kind == "cholesky_full"
    assert r.log[-1]["loss_kind"] == "NLL_full"


def test_warmup_keeps_covariance_fixed():
    ds = gen_sinusoid(1, 300, seed=0)
    spec = make_spec("NLL_full", 1, 1, hidden_layers=1, hidden_width=8, epochs=2,
                     schedule=Schedule("warmup", mean_only_fraction=0.5), weight_decay=0.0)
    before = init_model(spec).cov_net.state()
    seen = {}

    def cb(epoch, step, model):
        if epoch == 1:
            seen.update(model.cov_net.state())

    train(ds, spec, callback=cb, record_timing=False, record_memory=False)
    for k, v in before.items():
        np.testing.assert_array_equal(seen[k], v)


def test_labels_required():
    ds = gen_multivariate(4, 100, seed=0)
    spec = make_spec("W2_bound", 4, 4, hidden_layers=1, hidden_width=4, epochs=1)
    with pytest.raises(MissingGroundTruth):
        train(ds, spec)


def test_divergence_stops_and_flags():
    ds = gen_sinusoid(1, 256, seed=0)
    spec = make_spec("NLL_diag", 1, 1, hidden_layers=1, hidden_width=4, epochs=3, lr=1e-3)
    poisoned = ds.subset(np.arange(len(ds)))
    poisoned.targets[5, 0] = 1e308
    r = train(poisoned, spec, record_timing=False, record_memory=False)
    assert r.diverged
    assert len(r.log) < 3
