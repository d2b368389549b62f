"""Registry of numerical properties checked by ``hetreg verify``.

Every property returns ``(samples, margin)``: how many cases it checked and
the smallest slack against its tolerance. A property holds when the margin
is nonnegative. ``EXPECTED_COUNT`` must match the registry size, so a new
property cannot be added without being registered here.
"""
import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import datasets, gaussian, linalg, losses, pseudolabel
from .gaussian import Gaussian, SqrtGaussian
from .nn import CovHead

EXPECTED_COUNT = 30
W2_DIMS = (2, 4, 8, 16)


@dataclass(frozen=True)
class Property:
    module: str
    name: str
    fn: Callable

    @property
    def key(self):
        return f"{self.module}.{self.name}"


@dataclass
class Outcome:
    key: str
    samples: int
    margin: float
    seconds: float
    error: str = ""

    @property
    def passed(self):
        return not self.error and self.margin >= 0.0


REGISTRY = []


def prop(module, name):
    def register(fn):
        REGISTRY.append(Property(module, name, fn))
        return fn

    return register


def run_all(seed=0, scale=1.0, only=None):
    """Run every property (or those whose key starts with ``only``).

    ``scale`` multiplies sample counts; 1.0 is the full suite.
    """
    out = []
    for p in REGISTRY:
        if only and not p.key.startswith(only):
            continue
        rng = np.random.default_rng([seed, len(out)])
        t0 = time.perf_counter()
        try:
            samples, margin = p.fn(rng, scale)
            error = ""
        except Exception as exc:  # reported as a failed property
            samples, margin, error = 0, -math.inf, f"{type(exc).__name__}: {exc}"
        out.append(Outcome(p.key, samples, float(margin), time.perf_counter() - t0, error))
    return out


def _count(n, scale):
    return max(1, int(round(n * scale)))


def _rel_fro(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def _commuting_pair(rng, dim):
    q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    a = (q * rng.uniform(0.1, 3.0, dim)) @ q.T
    b = (q * rng.uniform(0.1, 3.0, dim)) @ q.T
    return 0.5 * (a + a.T), 0.5 * (b + b.T)


def _pair(rng, dim):
    m1, m2 = rng.normal(size=dim), rng.normal(size=dim)
    return (Gaussian(m1, linalg.random_spd(rng, dim) / dim),
            Gaussian(m2, linalg.random_spd(rng, dim) / dim))


def _sqrt_pair(a, b):
    return (SqrtGaussian(a.mean, linalg.spd_sqrt(a.cov)), SqrtGaussian(b.mean, linalg.spd_sqrt(b.cov)))


# -- linalg --------------------------------------------------------------------


@prop("linalg", "sqrt_squares_back")
def _sqrt_squares_back(rng, scale):
    worst, n = 1e-8, 0
    for dim in range(2, 17):
        for _ in range(_count(1000 / 15, scale)):
            a = linalg.random_spd(rng, dim)
            r = linalg.spd_sqrt(a)
            worst = min(worst, 1e-8 - _rel_fro(r @ r, a))
            n += 1
    return n, worst


@prop("linalg", "cholesky_reconstructs")
def _cholesky_reconstructs(rng, scale):
    worst, n = 1e-10, 0
    for dim in (1, 2, 4, 8, 16, 32):
        for _ in range(_count(50, scale)):
            a = linalg.random_spd(rng, dim)
            L = linalg.cholesky(a)
            worst = min(worst, 1e-10 - _rel_fro(L @ L.T, a))
            n += 1
    return n, worst


@prop("linalg", "mahalanobis_metric")
def _mahalanobis_metric(rng, scale):
    worst, n = 1e-12, 0
    for _ in range(_count(300, scale)):
        dim = int(rng.integers(1, 9))
        prec = linalg.random_spd(rng, dim)
        u, v, w = rng.normal(size=(3, dim))
        duv, dvu = linalg.mahalanobis(u, v, prec), linalg.mahalanobis(v, u, prec)
        if duv != dvu:
            return n, -abs(duv - dvu)
        slack = linalg.mahalanobis(u, w, prec) + linalg.mahalanobis(w, v, prec) - duv
        worst = min(worst, slack + 1e-12)
        n += 1
    return n, worst


@prop("linalg", "weighted_covariance_population")
def _weighted_cov_population(rng, scale):
    worst, n = 1e-10, 0
    for _ in range(_count(100, scale)):
        N, dim = int(rng.integers(2, 40)), int(rng.integers(1, 6))
        pts = rng.normal(size=(N, dim))
        _, got = linalg.weighted_covariance(pts, np.full(N, 1.0 / N))
        want = np.atleast_2d(np.cov(pts, rowvar=False)) * (N - 1) / N
        worst = min(worst, 1e-10 - float(np.max(np.abs(got - want))))
        n += 1
    return n, worst


@prop("linalg", "project_idempotent")
def _project_idempotent(rng, scale):
    n = 0
    for _ in range(_count(200, scale)):
        dim = int(rng.integers(1, 9))
        a = rng.normal(size=(dim, dim))
        p1 = linalg.project_to_spd(a + a.T)
        if not np.array_equal(linalg.project_to_spd(p1), p1):
            return n, -1.0
        n += 1
    return n, 0.0


# -- gaussian metrics ----------------------------------------------------------


@prop("gaussian", "w2_bound_dominates")
def _w2_bound_dominates(rng, scale):
    worst, n = math.inf, 0
    for dim in W2_DIMS:
        for _ in range(_count(1000, scale)):
            a, b = _pair(rng, dim)
            exact = gaussian.w2_exact(a, b)
            bound = gaussian.w2_bound(*_sqrt_pair(a, b))
            worst = min(worst, bound + 1e-8 * (1.0 + exact) - exact)
            n += 1
    return n, worst


@prop("gaussian", "w2_bound_tight_when_commuting")
def _w2_commuting(rng, scale):
    worst, n = math.inf, 0
    for dim in W2_DIMS:
        for _ in range(_count(250, scale)):
            ca, cb = _commuting_pair(rng, dim)
            a = Gaussian(rng.normal(size=dim), ca)
            b = Gaussian(rng.normal(size=dim), cb)
            gap = abs(gaussian.w2_exact(a, b) - gaussian.w2_bound(*_sqrt_pair(a, b)))
            worst = min(worst, 1e-9 - gap)
            n += 1
    return n, worst


@prop("gaussian", "trace_root_gap_nonnegative")
def _trace_root_gap(rng, scale):
    worst, n = math.inf, 0
    for dim in W2_DIMS:
        for _ in range(_count(1000, scale)):
            a, b = _pair(rng, dim)
            worst = min(worst, gaussian.trace_root_gap(a.cov, b.cov) + 1e-9)
            n += 1
    return n, worst


@prop("gaussian", "kl_zero_on_self")
def _kl_self(rng, scale):
    worst, n = math.inf, 0
    for _ in range(_count(200, scale)):
        a, _ = _pair(rng, int(rng.integers(1, 17)))
        worst = min(worst, 1e-12 - gaussian.kl_divergence(a, a))
        n += 1
    return n, worst


@prop("gaussian", "kl_nonnegative")
def _kl_nonneg(rng, scale):
    worst, n = math.inf, 0
    for _ in range(_count(500, scale)):
        a, b = _pair(rng, int(rng.integers(1, 17)))
        worst = min(worst, gaussian.kl_divergence(a, b))
        n += 1
    return n, worst


@prop("gaussian", "w2_symmetric")
def _w2_sym(rng, scale):
    worst, n = math.inf, 0
    for _ in range(_count(500, scale)):
        a, b = _pair(rng, int(rng.integers(1, 17)))
        worst = min(worst, 1e-9 - abs(gaussian.w2_exact(a, b) - gaussian.w2_exact(b, a)))
        n += 1
    return n, worst


@prop("gaussian", "kl_minimizer_doubles")
def _kl_minimizer_doubles(rng, scale):
    return _minimizer_check(rng, scale, calibrated=False)


@prop("gaussian", "calibrated_minimizer_matches")
def _calibrated_minimizer(rng, scale):
    return _minimizer_check(rng, scale, calibrated=True)


def _minimizer_check(rng, scale, calibrated):
    dim, N = 3, 50_000
    worst, n = math.inf, 0
    for _ in range(_count(5, scale)):
        sigma = linalg.random_spd(rng, dim)
        y = rng.multivariate_normal(rng.normal(size=dim), sigma, size=N)
        r = y - y.mean(axis=0)
        if calibrated:
            got, want = gaussian.calibrated_kl_minimizer(sigma, r), sigma
        else:
            got, want = gaussian.kl_minimizer(sigma, r), 2.0 * sigma
        worst = min(worst, 0.05 - _rel_fro(got, want))
        n += 1
    return n, worst


# -- pseudo-labels -------------------------------------------------------------


def _random_table(rng, N=100, m=None, n=None):
    m = m or int(rng.integers(1, 4))
    n = n or int(rng.integers(1, 4))
    return datasets.RegressionDataset(rng.normal(size=(N, m)), rng.normal(size=(N, n)))


@prop("pseudolabel", "matches_naive_reference")
def _pl_reference(rng, scale):
    n = 0
    for _ in range(_count(20, scale)):
        ds = _random_table(rng)
        k = pseudolabel.default_k(ds.target_dim)
        pl = pseudolabel.pseudo_labels(ds, k)
        idx, dist, w, mu, cov = pseudolabel.reference_rows(ds, k)
        same = (np.array_equal(pl.indices, idx) and np.array_equal(pl.distances, dist)
                and np.array_equal(pl.weights, w) and np.array_equal(pl.mean, mu)
                and np.array_equal(pl.cov, cov))
        if not same:
            return n, -1.0
        n += 1
    return n, 0.0


@prop("pseudolabel", "weights_simplex")
def _pl_weights(rng, scale):
    worst, n = math.inf, 0
    for _ in range(_count(10, scale)):
        pl = pseudolabel.pseudo_labels(_random_table(rng, 200))
        worst = min(worst, float(np.min(pl.weights)) + 0.0)
        worst = min(worst, 1e-12 - float(np.max(np.abs(pl.weights.sum(axis=1) - 1.0))))
        n += len(pl.weights)
    return n, worst


@prop("pseudolabel", "labels_psd")
def _pl_psd(rng, scale):
    worst, n = math.inf, 0
    for _ in range(_count(10, scale)):
        pl = pseudolabel.pseudo_labels(_random_table(rng, 200))
        worst = min(worst, float(np.min(np.linalg.eigvalsh(pl.cov))) + 1e-10)
        n += len(pl.cov)
    return n, worst


@prop("pseudolabel", "permutation_equivariant")
def _pl_perm(rng, scale):
    worst, n = 1e-12, 0
    for _ in range(_count(5, scale)):
        ds = _random_table(rng, 150)
        perm = rng.permutation(len(ds))
        a = pseudolabel.pseudo_labels(ds)
        b = pseudolabel.pseudo_labels(ds.subset(perm))
        worst = min(worst, 1e-12 - float(np.max(np.abs(a.cov[perm] - b.cov))))
        worst = min(worst, 1e-12 - float(np.max(np.abs(a.mean[perm] - b.mean))))
        n += 1
    return n, worst


@prop("pseudolabel", "diagonal_scaling_invariant")
def _pl_scaling(rng, scale):
    n = 0
    for _ in range(_count(5, scale)):
        ds = _random_table(rng, 150, m=3)
        d = rng.uniform(0.2, 5.0, ds.input_dim)
        scaled = datasets.RegressionDataset(ds.inputs * d, ds.targets)
        a = pseudolabel.pseudo_labels(ds, ridge=0.0)
        b = pseudolabel.pseudo_labels(scaled, ridge=0.0)
        same = all(set(a.indices[i]) == set(b.indices[i]) for i in range(len(ds)))
        if not same:
            return n, -1.0
        n += 1
    return n, 0.0


@prop("pseudolabel", "homoscedastic_recovery")
def _pl_homoscedastic(rng, scale):
    dim, N = 2, _count(20_000, min(scale, 1.0))
    sigma = linalg.random_spd(rng, dim)
    x = rng.normal(size=(N, 2))
    y = x @ rng.normal(size=(2, dim)) * 0.1 + rng.multivariate_normal(np.zeros(dim), sigma, size=N)
    pl = pseudolabel.pseudo_labels(datasets.RegressionDataset(x, y))
    return N, 0.10 - _rel_fro(pl.cov.mean(axis=0), sigma)


# -- autodiff / heads ----------------------------------------------------------


@prop("autodiff", "loss_gradients")
def _loss_gradients(rng, scale):
    worst, n = math.inf, 0
    for name in losses.LOSS_NAMES:
        for dim in (1, 2, 4, 8):
            for _ in range(_count(20, scale)):
                err = losses.loss_grad_check(name, *losses.random_loss_problem(name, dim, rng))
                worst = min(worst, 1e-4 - err)
                n += 1
    return n, worst


@prop("autodiff", "cholesky_head_pd")
def _chol_head(rng, scale):
    worst, n = math.inf, 0
    for dim in (1, 2, 4, 8):
        head = CovHead("cholesky_full", dim)
        raw = rng.normal(0.0, 1.0, size=(_count(2500, scale), head.raw_dim))
        worst = min(worst, float(np.min(np.linalg.eigvalsh(head.covariance(raw)))))
        n += len(raw)
    # strictly positive: report the margin above zero only when it is positive
    return n, worst if worst > 0.0 else -1.0


@prop("autodiff", "sym_sqrt_head_psd")
def _sqrt_head(rng, scale):
    worst, n = math.inf, 0
    for dim in (1, 2, 4, 8):
        head = CovHead("sym_sqrt", dim)
        raw = rng.normal(0.0, 3.0, size=(_count(2500, scale), head.raw_dim))
        cov = head.covariance(raw)
        tol = 1e-12 * np.max(np.abs(cov), axis=(1, 2))
        worst = min(worst, float(np.min(np.linalg.eigvalsh(cov).min(axis=1) + tol)))
        n += len(raw)
    return n, worst


# -- losses --------------------------------------------------------------------


def _grads(kind, model, batch):
    for p in model.params():
        p.grad = None
    losses.build_loss(kind, batch, model.mean_net, model.cov_net, model.head).backward()
    return [np.zeros_like(p.value) if p.grad is None else p.grad.copy() for p in model.params()]


@prop("losses", "beta_zero_is_diag_nll")
def _beta_zero(rng, scale):
    n = 0
    for _ in range(_count(20, scale)):
        dim = int(rng.choice([1, 2, 4, 8]))
        model, batch = losses.random_loss_problem("NLL_diag", dim, rng)
        a = losses.LossKind("BetaNLL", 0.0)
        b = losses.LossKind("NLL_diag")
        va = losses.build_loss(a, batch, model.mean_net, model.cov_net, model.head).value
        vb = losses.build_loss(b, batch, model.mean_net, model.cov_net, model.head).value
        same = va == vb and all(np.array_equal(g, h) for g, h in zip(_grads(a, model, batch), _grads(b, model, batch)))
        if not same:
            return n, -1.0
        n += 1
    return n, 0.0


@prop("losses", "faithful_mean_gradients_are_mse")
def _faithful_mean(rng, scale):
    worst, n = math.inf, 0
    for _ in range(_count(20, scale)):
        dim = int(rng.choice([1, 2, 4, 8]))
        model, batch = losses.random_loss_problem("Faithful", dim, rng)
        n_mean = len(model.mean_net.params)
        g_f = _grads(losses.LossKind("Faithful"), model, batch)[:n_mean]
        for p in model.params():
            p.grad = None
        losses.loss_mean_only(batch, model.mean_net).backward()
        g_m = [p.grad for p in model.mean_net.params]
        for a, b in zip(g_f, g_m):
            worst = min(worst, 1e-12 * (1.0 + float(np.max(np.abs(b)))) - float(np.max(np.abs(a - b))))
        n += 1
    return n, worst


@prop("losses", "w2_cov_gradients_ignore_targets")
def _w2_residual_free(rng, scale):
    n = 0
    for _ in range(_count(20, scale)):
        dim = int(rng.choice([1, 2, 4, 8]))
        model, batch = losses.random_loss_problem("W2_bound", dim, rng)
        n_mean = len(model.mean_net.params)
        kind = losses.LossKind("W2_bound")
        g1 = _grads(kind, model, batch)[n_mean:]
        moved = losses.Batch(batch.x, batch.y + rng.normal(0, 5.0, batch.y.shape), batch.label_sqrt, batch.prior_logdet)
        g2 = _grads(kind, model, moved)[n_mean:]
        if not all(np.array_equal(a, b) for a, b in zip(g1, g2)):
            return n, -1.0
        n += 1
    return n, 0.0


@prop("losses", "no_eig_in_training")
def _no_eig(rng, scale):
    n = 0
    for name in losses.LOSS_NAMES:
        for dim in (1, 2, 4, 8):
            model, batch = losses.random_loss_problem(name, dim, rng)
            with linalg.count_eig_calls() as counter:
                _grads(losses.LossKind(name), model, batch)
            if counter.calls:
                return n, -float(counter.calls)
            n += 1
    return n, 0.0


# -- datasets ------------------------------------------------------------------


@prop("datasets", "generators_deterministic")
def _gen_det(rng, scale):
    seed = int(rng.integers(1000))
    pairs = [
        (lambda: datasets.gen_sinusoid(2, 500, seed)),
        (lambda: datasets.gen_multivariate(4, 200, seed)),
        (lambda: problem_arrays(datasets.gen_bivariate_p1(seed))),
    ]
    for make in pairs:
        a, b = make(), make()
        fields = ("inputs", "targets", "gt_mean", "gt_cov")
        if isinstance(a, tuple):
            same = all(np.array_equal(u, v) for u, v in zip(a, b))
        else:
            same = all(np.array_equal(getattr(a, f), getattr(b, f)) for f in fields)
        if not same:
            return len(pairs), -1.0
    return len(pairs), 0.0


def problem_arrays(problem):
    return (problem.target.mean, problem.target.cov, problem.init.mean,
            problem.sampler(50, np.random.default_rng(0)))


@prop("datasets", "multivariate_gt_pd")
def _gt_pd(rng, scale):
    worst, n = math.inf, 0
    for dim in (4, 8):
        ds = datasets.gen_multivariate(dim, _count(2000, scale), int(rng.integers(1000)))
        worst = min(worst, float(np.min(np.linalg.eigvalsh(ds.gt_cov))))
        n += len(ds)
    return n, worst if worst > 0.0 else -1.0


@prop("datasets", "standardize_idempotent")
def _std_idem(rng, scale):
    worst, n = math.inf, 0
    for _ in range(_count(20, scale)):
        ds = _random_table(rng, 50)
        ds = datasets.RegressionDataset(ds.inputs * 7 + 3, ds.targets * 0.1 - 2)
        once, _ = datasets.standardize(ds)
        twice, _ = datasets.standardize(once)
        gap = max(float(np.max(np.abs(once.inputs - twice.inputs))),
                  float(np.max(np.abs(once.targets - twice.targets))))
        worst = min(worst, 1e-10 - gap)
        n += 1
    return n, worst


# -- report files --------------------------------------------------------------


@prop("bench_cli", "csv_round_trip")
def _csv_round_trip(rng, scale):
    import os
    import tempfile

    n = 0
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "t.csv")
        for _ in range(_count(20, scale)):
            table = rng.normal(size=(5, 4)) * 10.0 ** rng.integers(-200, 200, size=(5, 4))
            datasets.write_csv(path, ["a", "b", "c", "d"], table.tolist())
            if not np.array_equal(datasets.load_csv(path, has_header=True), table):
                return n, -1.0
            n += 1
    return n, 0.0


def registry_complete():
    """Meta-check: the registry holds exactly ``EXPECTED_COUNT`` properties."""
    return len(REGISTRY) == EXPECTED_COUNT and len({p.key for p in REGISTRY}) == len(REGISTRY)


def format_report(outcomes):
    lines = [f"{'property':<45} {'status':<6} {'samples':>8} {'margin':>12} {'secs':>7}"]
    for o in outcomes:
        status = "PASS" if o.passed else "FAIL"
        lines.append(f"{o.key:<45} {status:<6} {o.samples:>8d} {o.margin:>12.3e} {o.seconds:>7.2f}")
        if o.error:
            lines.append(f"    {o.error}")
    return "\n".join(lines)
