"""Training objectives, schedules, the training loop and evaluation.

Six objectives are supported, each tied to a covariance head:

============== ================ ==================================================
loss           head             per-sample value
============== ================ ==================================================
NLL_full       cholesky_full    ``log|S| + r^T S^-1 r``
NLL_diag       diagonal         ``sum_d log s_d + r_d^2 / s_d``
BetaNLL        diagonal         NLL_diag terms scaled by ``stop(s_d ** beta)``
Faithful       cholesky_full    ``|r|^2 + NLL_full(y, stop(mean), S)``
KL_calibrated  cholesky_full    KL from ``N(y, prior)`` with halved trace/residual
W2_bound       sym_sqrt         ``|r|^2 + ||S^1/2 - label^1/2||_F^2``
============== ================ ==================================================

``r = y - predicted mean``. No loss calls an eigendecomposition; label
square roots and log-determinants are computed once before training.
"""
import math
import time
import tracemalloc
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import gaussian, linalg
from .errors import MissingGroundTruth, NonFinite
from .nn import AdamW, CovHead, MLP, MLPConfig

LOSS_NAMES = ("NLL_full", "NLL_diag", "BetaNLL", "Faithful", "KL_calibrated", "W2_bound")
HEAD_FOR_LOSS = {
    "NLL_full": "cholesky_full",
    "NLL_diag": "diagonal",
    "BetaNLL": "diagonal",
    "Faithful": "cholesky_full",
    "KL_calibrated": "cholesky_full",
    "W2_bound": "sym_sqrt",
}
NEEDS_LABELS = ("KL_calibrated", "W2_bound")
METRIC_COLUMNS = ("epoch", "loss_kind", "schedule", "mse", "nll", "kl", "w2", "step_time_ms", "peak_bytes")


@dataclass(frozen=True)
class LossKind:
    name: str
    beta: float = 0.5

    def __post_init__(self):
        if self.name not in LOSS_NAMES:
            raise ValueError(f"unknown loss {self.name!r}; expected one of {LOSS_NAMES}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")

    @property
    def head(self):
        return HEAD_FOR_LOSS[self.name]

    @property
    def needs_labels(self):
        return self.name in NEEDS_LABELS

    def __str__(self):
        return f"BetaNLL({self.beta:g})" if self.name == "BetaNLL" else self.name


@dataclass(frozen=True)
class Schedule:
    kind: str = "standard"
    mean_only_fraction: float = 0.5
    switch_epoch: int = 0
    then: Optional[LossKind] = None

    def __post_init__(self):
        if self.kind not in ("standard", "warmup", "hybrid"):
            raise ValueError(f"unknown schedule {self.kind!r}")
        if self.kind == "warmup" and not 0.0 < self.mean_only_fraction < 1.0:
            raise ValueError("warm-up fraction must lie in (0, 1)")
        if self.kind == "hybrid" and self.then is None:
            object.__setattr__(self, "then", LossKind("NLL_full"))

    def __str__(self):
        if self.kind == "warmup":
            return f"warmup({self.mean_only_fraction:g})"
        if self.kind == "hybrid":
            return f"hybrid({self.switch_epoch}->{self.then})"
        return "standard"


@dataclass(frozen=True)
class TrainSpec:
    loss: LossKind
    mean_arch: MLPConfig
    cov_arch: MLPConfig
    schedule: Schedule = field(default_factory=Schedule)
    lr: float = 1e-3
    epochs: int = 100
    batch: int = 64
    seed: int = 0
    pseudo_k: Optional[int] = None
    weight_decay: float = 0.01

    def __post_init__(self):
        if self.schedule.kind == "hybrid" and not self.schedule.switch_epoch < max(self.epochs, 1):
            raise ValueError("switch_epoch must be smaller than the number of epochs")
        head = CovHead(self.loss.head, self.mean_arch.output_dim)
        if self.cov_arch.output_dim != head.raw_dim:
            raise ValueError(
                f"{self.loss} uses a {head.kind} head needing {head.raw_dim} outputs, "
                f"cov_arch has {self.cov_arch.output_dim}"
            )

    @property
    def target_dim(self):
        return self.mean_arch.output_dim


def make_spec(loss, input_dim, target_dim, hidden_layers=4, hidden_width=50, activation="tanh", **kwargs):
    """TrainSpec with mean and covariance networks of the same body."""
    loss = loss if isinstance(loss, LossKind) else LossKind(loss)
    head = CovHead(loss.head, target_dim)
    mean_arch = MLPConfig(input_dim, target_dim, hidden_layers, hidden_width, activation)
    cov_arch = MLPConfig(input_dim, head.raw_dim, hidden_layers, hidden_width, activation)
    return TrainSpec(loss=loss, mean_arch=mean_arch, cov_arch=cov_arch, **kwargs)


# -- batches and labels --------------------------------------------------------


@dataclass
class Batch:
    x: np.ndarray
    y: np.ndarray
    label_sqrt: Optional[np.ndarray] = None  # (B, n, n)
    prior_logdet: Optional[np.ndarray] = None  # (B,)

    def take(self, rows):
        return Batch(
            self.x[rows],
            self.y[rows],
            None if self.label_sqrt is None else self.label_sqrt[rows],
            None if self.prior_logdet is None else self.prior_logdet[rows],
        )


def label_arrays(sqrt_cov):
    """Per-row label log-determinants from symmetric square roots.

    ``log det(S^2) = sum log lambda_i(S)^2``; squared eigenvalues are floored
    at ``1e-6 * mean`` (absolute floor 1e-12) so rank-deficient labels give a
    finite constant. Runs once before training.
    """
    sqrt_cov = np.asarray(sqrt_cov, dtype=np.float64)
    # repeated labels (one target distribution for every row) share the work
    uniq, inverse = np.unique(sqrt_cov.reshape(len(sqrt_cov), -1), axis=0, return_inverse=True)
    if len(uniq) < len(sqrt_cov):
        dim = sqrt_cov.shape[-1]
        return label_arrays(uniq.reshape(-1, dim, dim))[inverse.reshape(-1)]
    out = np.empty(sqrt_cov.shape[0])
    for i, s in enumerate(sqrt_cov):
        lam2 = linalg.sym_eig(s).eigenvalues ** 2
        floor = max(linalg.RIDGE * lam2.mean(), 1e-12)
        out[i] = float(np.sum(np.log(np.maximum(lam2, floor))))
    return out


def ground_truth_sqrt(ds):
    if not ds.has_ground_truth:
        raise MissingGroundTruth("dataset carries no ground-truth covariance")
    return np.stack([linalg.spd_sqrt(c) for c in ds.gt_cov])


def make_batch(ds, label_sqrt=None):
    if label_sqrt is None:
        return Batch(ds.inputs, ds.targets)
    return Batch(ds.inputs, ds.targets, np.asarray(label_sqrt), label_arrays(label_sqrt))


# -- losses --------------------------------------------------------------------


def _residual(batch, mean_net):
    mu = mean_net(batch.x)
    return ad.sub(ad.Tensor(batch.y), mu)


def _need_labels(batch, name):
    if batch.label_sqrt is None:
        raise MissingGroundTruth(f"{name} needs covariance labels in the batch")


def loss_nll_full(batch, mean_net, cov_net, head):
    L = head.factor(cov_net(batch.x))
    r = _residual(batch, mean_net)
    return ad.mean(ad.logdet_from_chol(L) + ad.quadratic_form(r, L))


def _diag_nll_terms(r, var):
    return ad.log(var) + ad.div(ad.square(r), var)


def loss_nll_diag(batch, mean_net, cov_net, head):
    var = head.factor(cov_net(batch.x))
    r = _residual(batch, mean_net)
    return ad.mean(ad.reduce_sum(_diag_nll_terms(r, var), axis=-1))


def loss_beta_nll(batch, mean_net, cov_net, head, beta):
    var = head.factor(cov_net(batch.x))
    r = _residual(batch, mean_net)
    terms = _diag_nll_terms(r, var)
    if beta != 0.0:
        terms = ad.mul(ad.stop_gradient(ad.power(var, beta)), terms)
    return ad.mean(ad.reduce_sum(terms, axis=-1))


def loss_faithful(batch, mean_net, cov_net, head):
    mu = mean_net(batch.x)
    y = ad.Tensor(batch.y)
    mse = ad.reduce_sum(ad.square(ad.sub(y, mu)), axis=-1)
    L = head.factor(cov_net(batch.x))
    r_detached = ad.sub(y, ad.stop_gradient(mu))
    return ad.mean(mse + ad.logdet_from_chol(L) + ad.quadratic_form(r_detached, L))


def loss_kl_calibrated(batch, mean_net, cov_net, head):
    _need_labels(batch, "KL_calibrated")
    L = head.factor(cov_net(batch.x))
    r = _residual(batch, mean_net)
    k = batch.y.shape[1]
    a = ad.tri_solve(L, ad.Tensor(batch.label_sqrt))
    trace = ad.frobenius_sq(a)
    quad = ad.quadratic_form(r, L)
    inner = ad.scale(trace + quad, 0.5) - float(k) + ad.logdet_from_chol(L) - ad.Tensor(batch.prior_logdet)
    return ad.mean(ad.scale(inner, 0.5))


def loss_w2_bound(batch, mean_net, cov_net, head):
    _need_labels(batch, "W2_bound")
    S = head.factor(cov_net(batch.x))
    r = _residual(batch, mean_net)
    per = ad.reduce_sum(ad.square(r), axis=-1) + ad.frobenius_sq(ad.sub(S, ad.Tensor(batch.label_sqrt)))
    return ad.mean(per)


def loss_mean_only(batch, mean_net):
    r = _residual(batch, mean_net)
    return ad.mean(ad.reduce_sum(ad.square(r), axis=-1))


def build_loss(kind, batch, mean_net, cov_net, head):
    """Graph node of the batch-mean objective ``kind``."""
    name = kind.name
    if name == "NLL_full":
        return loss_nll_full(batch, mean_net, cov_net, head)
    if name == "NLL_diag":
        return loss_nll_diag(batch, mean_net, cov_net, head)
    if name == "BetaNLL":
        return loss_beta_nll(batch, mean_net, cov_net, head, kind.beta)
    if name == "Faithful":
        return loss_faithful(batch, mean_net, cov_net, head)
    if name == "KL_calibrated":
        return loss_kl_calibrated(batch, mean_net, cov_net, head)
    return loss_w2_bound(batch, mean_net, cov_net, head)


# -- model ---------------------------------------------------------------------


@dataclass
class Model:
    mean_net: MLP
    cov_net: MLP
    head: CovHead

    def predict(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        mu = self.mean_net(ad.Tensor(x)).value
        cov = self.head.covariance(self.cov_net(ad.Tensor(x)).value)
        return mu, cov

    def params(self):
        return self.mean_net.params + self.cov_net.params


def init_model(spec, mean_output_bias=None):
    """Seeded networks. The mean network and the covariance network body
    depend only on ``spec.seed``, so runs with different losses start from the
    same estimators; the covariance output layer is biased to ``Sigma = I``.
    """
    head = CovHead(spec.loss.head, spec.target_dim)
    mean_net = MLP.init(spec.mean_arch, np.random.default_rng([spec.seed, 0]), output_bias=mean_output_bias)
    body = MLP.init(
        replace(spec.cov_arch, output_dim=1), np.random.default_rng([spec.seed, 1])
    )
    last = MLP.init(spec.cov_arch, np.random.default_rng([spec.seed, 2]), output_bias=head.identity_raw())
    cov_net = MLP(spec.cov_arch, body.params[:-2] + last.params[-2:])
    return Model(mean_net, cov_net, head)


def convert_to_cholesky(model, calib_x):
    """Swap a ``sym_sqrt`` covariance head for a ``cholesky_full`` one.

    The hidden layers are kept; the new output layer has zero weights and a
    bias whose factor ``L`` satisfies ``L L^T = mean_i S_i^2`` over the
    calibration inputs.
    """
    n = model.head.dim
    target = CovHead("cholesky_full", n)
    if model.head.kind == target.kind:
        return model
    cov = model.head.covariance(model.cov_net(ad.Tensor(calib_x)).value).mean(axis=0)
    L = linalg.cholesky(linalg.project_to_spd(cov))
    rows, cols = np.tril_indices(n)
    raw = L[rows, cols].copy()
    diag = rows == cols
    # inverse of softplus(x) + floor
    raw[diag] = np.log(np.expm1(np.maximum(L[rows[diag], cols[diag]] - 1e-6, 1e-12)))
    width_in = model.cov_net.params[-2].shape[0]
    old = model.cov_net.params[:-2]
    new_w = ad.parameter(np.zeros((width_in, target.raw_dim)), name=model.cov_net.params[-2].name)
    new_b = ad.parameter(raw, name=model.cov_net.params[-1].name)
    cfg = replace(model.cov_net.cfg, output_dim=target.raw_dim)
    return Model(model.mean_net, MLP(cfg, old + [new_w, new_b]), target)


# -- evaluation ----------------------------------------------------------------


def evaluate(model, ds, metrics=("mse", "nll", "kl", "w2")):
    """Dataset-mean metrics of a fitted model.

    ``kl`` is ``KL(ground truth || prediction)`` and ``w2`` the exact squared
    2-Wasserstein distance; both need ground truth on ``ds``.
    """
    metrics = tuple(metrics)
    if any(m in ("kl", "w2") for m in metrics) and not ds.has_ground_truth:
        raise MissingGroundTruth("kl / w2 metrics need ground-truth covariances")
    mu, cov = model.predict(ds.inputs)
    out = {}
    if "mse" in metrics:
        out["mse"] = float(np.mean(np.sum((ds.targets - mu) ** 2, axis=1)))
    with np.errstate(all="ignore"):
        if "nll" in metrics:
            out["nll"] = _safe_mean(lambda: gaussian.batch_gaussian_nll(ds.targets, mu, cov))
        if "kl" in metrics:
            out["kl"] = _safe_mean(lambda: gaussian.batch_kl_divergence(ds.gt_mean, ds.gt_cov, mu, cov))
        if "w2" in metrics:
            out["w2"] = _safe_mean(lambda: gaussian.batch_w2_exact(mu, cov, ds.gt_mean, ds.gt_cov))
    return out


def _safe_mean(fn):
    try:
        return float(np.mean(fn()))
    except np.linalg.LinAlgError:
        return math.nan


# -- training ------------------------------------------------------------------


@dataclass
class TrainResult:
    model: Model
    log: list
    eig_calls: int = 0
    diverged: bool = False
    step_times_ms: list = field(default_factory=list)


def _record(epoch, spec, kind, metrics, step_ms, peak):
    return {
        "epoch": epoch,
        "loss_kind": str(kind),
        "schedule": str(spec.schedule),
        "mse": metrics.get("mse", math.nan),
        "nll": metrics.get("nll", math.nan),
        "kl": metrics.get("kl", math.nan),
        "w2": metrics.get("w2", math.nan),
        "step_time_ms": step_ms,
        "peak_bytes": peak,
    }


def _labels_for(spec, labels):
    if labels is None:
        if spec.loss.needs_labels or (spec.schedule.then is not None and spec.schedule.then.needs_labels):
            raise MissingGroundTruth(f"{spec.loss} training needs covariance labels")
        return None
    return getattr(labels, "sqrt_cov", labels)


def train_step(model, kind, batch, opt_mean, opt_cov, mean_only=False):
    """One forward/backward/update; returns the loss value.

    Parameters are left untouched when the loss is not finite.
    """
    if mean_only:
        loss = loss_mean_only(batch, model.mean_net)
    else:
        loss = build_loss(kind, batch, model.mean_net, model.cov_net, model.head)
    value = float(loss.value)
    if not math.isfinite(value):
        return value
    opt_mean.zero_grad()
    opt_cov.zero_grad()
    loss.backward()
    opt_mean.step()
    if not mean_only:
        opt_cov.step()
    return value


def train(
    ds,
    spec,
    labels=None,
    eval_ds=None,
    metrics=None,
    mean_output_bias=None,
    record_timing=True,
    record_memory=True,
    callback=None,
    model=None,
    eval_every=1,
):
    """Fit mean and covariance networks with AdamW.

    Parameters
    ----------
    ds : RegressionDataset
        Training rows.
    spec : TrainSpec
    labels : PseudoLabelSet or array (N, n, n), optional
        Square-root covariance labels aligned with ``ds`` (required by
        ``KL_calibrated`` and ``W2_bound``).
    eval_ds : RegressionDataset, optional
        Rows evaluated after every epoch (default ``ds``).
    metrics : tuple of str, optional
        Defaults to mse/nll plus kl/w2 when ``eval_ds`` has ground truth.
    callback : callable, optional
        ``callback(epoch, step, model)`` after every optimizer step.
    eval_every : int
        Log a metrics row every this many epochs and after the last one.

    Returns
    -------
    TrainResult
        A non-finite loss stops training early with ``diverged=True``; the
        log then holds the epochs completed so far.
    """
    eval_ds = ds if eval_ds is None else eval_ds
    if metrics is None:
        metrics = ("mse", "nll", "kl", "w2") if eval_ds.has_ground_truth else ("mse", "nll")
    sqrt_labels = _labels_for(spec, labels)
    data = make_batch(ds, sqrt_labels)
    model = init_model(spec, mean_output_bias) if model is None else model
    opt_mean = AdamW(model.mean_net.params, spec.lr, weight_decay=spec.weight_decay)
    opt_cov = AdamW(model.cov_net.params, spec.lr, weight_decay=spec.weight_decay)
    order_rng = np.random.default_rng([spec.seed, 7])
    n = len(ds)
    batch = min(spec.batch, n)
    result = TrainResult(model, [])
    sched = spec.schedule
    kind = spec.loss
    mean_only_epochs = int(round(sched.mean_only_fraction * spec.epochs)) if sched.kind == "warmup" else 0
    step = 0

    for epoch in range(1, spec.epochs + 1):
        if sched.kind == "hybrid" and epoch == sched.switch_epoch + 1:
            kind = sched.then
            if result.model.head.kind != kind.head:
                result.model = convert_to_cholesky(result.model, ds.inputs[: min(n, 256)])
                opt_cov = AdamW(result.model.cov_net.params, spec.lr, weight_decay=spec.weight_decay)
        mean_only = epoch <= mean_only_epochs
        perm = order_rng.permutation(n)
        times = []
        peak = 0
        for start in range(0, n - batch + 1, batch):
            rows = perm[start:start + batch]
            sub = data.take(rows) if batch < n else data
            measure_mem = record_memory and not times and not tracemalloc.is_tracing()
            if measure_mem:
                tracemalloc.start()
            t0 = time.perf_counter()
            with linalg.count_eig_calls() as counter:
                value = train_step(result.model, kind, sub, opt_mean, opt_cov, mean_only)
                result.diverged = not math.isfinite(value)
            times.append((time.perf_counter() - t0) * 1e3)
            if measure_mem:
                peak = tracemalloc.get_traced_memory()[1]
                tracemalloc.stop()
            result.eig_calls += counter.calls
            if result.diverged:
                return result
            step += 1
            if callback is not None:
                callback(epoch, step, result.model)
        result.step_times_ms.extend(times)
        if epoch % eval_every and epoch != spec.epochs:
            continue
        scores = evaluate(result.model, eval_ds, metrics)
        step_ms = float(np.mean(times)) if (times and record_timing) else 0.0
        result.log.append(_record(epoch, spec, kind, scores, step_ms, peak if record_timing else 0))
    return result


def raise_if_diverged(result, spec):
    if result.diverged:
        raise NonFinite(f"{spec.loss} produced a non-finite loss", log=result.log, epoch=len(result.log) + 1)


# -- gradient checking ---------------------------------------------------------


def random_loss_problem(kind, dim, rng, batch=4, hidden_width=3, input_dim=2):
    """Small random model and batch for checking one objective's gradients."""
    kind = kind if isinstance(kind, LossKind) else LossKind(kind)
    spec = make_spec(kind, input_dim, dim, hidden_layers=1, hidden_width=hidden_width,
                     seed=int(rng.integers(2**31)))
    model = init_model(spec)
    for p in model.params():
        p.value[...] = rng.normal(0.0, 0.5, p.value.shape)
    x = rng.normal(size=(batch, input_dim))
    y = rng.normal(size=(batch, dim))
    labels = None
    if kind.needs_labels:
        labels = np.stack([linalg.spd_sqrt(linalg.random_spd(rng, dim) / dim) for _ in range(batch)])
    b = Batch(x, y) if labels is None else Batch(x, y, labels, label_arrays(labels))
    return model, b


def loss_grad_check(kind, model, batch, h=1e-5):
    """Worst relative gradient error over every parameter of ``model``.

    Each parameter array is swapped for the differenced tensor in turn.
    """
    kind = kind if isinstance(kind, LossKind) else LossKind(kind)
    worst = 0.0
    for net in (model.mean_net, model.cov_net):
        for i, p in enumerate(net.params):
            def f(t, net=net, i=i):
                params = list(net.params)
                params[i] = t
                swapped = MLP(net.cfg, params)
                m = Model(
                    swapped if net is model.mean_net else model.mean_net,
                    swapped if net is model.cov_net else model.cov_net,
                    model.head,
                )
                return build_loss(kind, batch, m.mean_net, m.cov_net, m.head)

            worst = max(worst, ad.grad_check(f, p.value.copy(), h))
    return worst
