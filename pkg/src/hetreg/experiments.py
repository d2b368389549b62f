"""Runners for the synthetic studies: bivariate fitting, sinusoids, multivariate."""
from dataclasses import dataclass

import numpy as np

from . import datasets, gaussian, pseudolabel
from .datasets import RegressionDataset
from .losses import LossKind, Schedule, TrainSpec, evaluate, ground_truth_sqrt, make_spec, train
from .nn import MLPConfig, CovHead

TRAJECTORY_COLUMNS = ("step", "mu0", "mu1", "c00", "c01", "c11", "metric_kl", "metric_w2")


# -- Problem 1 -----------------------------------------------------------------


def problem1_dataset(problem, n_samples, seed):
    """Samples of the target with a constant (zero) input per row."""
    y = problem.sampler(n_samples, np.random.default_rng([seed, 3]))
    t = problem.target
    return RegressionDataset(
        np.zeros((n_samples, 1)),
        y,
        np.repeat(t.mean[None], n_samples, axis=0),
        np.repeat(t.cov[None], n_samples, axis=0),
    )


def problem1_spec(loss, lr=1e-2, steps=5000, seed=0, schedule=None, n_samples=None):
    """Direct fit of one distribution: zero-depth networks on a constant input,
    so the output biases are the free mean / covariance parameters."""
    loss = loss if isinstance(loss, LossKind) else LossKind(loss)
    head = CovHead(loss.head, 2)
    return TrainSpec(
        loss=loss,
        mean_arch=MLPConfig(1, 2, 0, 1),
        cov_arch=MLPConfig(1, head.raw_dim, 0, 1),
        schedule=schedule or Schedule(),
        lr=lr,
        epochs=steps,
        batch=n_samples or n_samples_default(),
        seed=seed,
    )


def n_samples_default():
    return 5_000


@dataclass
class Problem1Run:
    result: object
    trajectory: list
    target: gaussian.Gaussian

    @property
    def final_w2(self):
        return self.trajectory[-1][-1] if self.trajectory else float("nan")


def run_problem1(loss, seed, lr=1e-2, steps=5000, n_samples=None, schedule=None, record_timing=True,
                 start_at_target_mean=False, track_every=10):
    """Fit a bivariate target from an identity-covariance start (full batch).

    ``start_at_target_mean`` initializes the predicted mean at the target
    mean, the setting used to study warm-up. The trajectory holds every
    ``track_every``-th step and the last one; metrics rows are logged at the
    same cadence.
    """
    n_samples = n_samples or n_samples_default()
    problem = datasets.gen_bivariate_p1(seed)
    ds = problem1_dataset(problem, n_samples, seed)
    spec = problem1_spec(loss, lr, steps, seed, schedule, n_samples)
    init_mean = problem.target.mean if start_at_target_mean else problem.init.mean
    labels = ground_truth_sqrt(ds.subset([0]))
    labels = np.repeat(labels, n_samples, axis=0)
    eval_ds = ds.subset([0])
    trajectory = []

    def track(epoch, step, model):
        if step % track_every and step != steps:
            return
        mu, cov = model.predict(np.zeros((1, 1)))
        pred = gaussian.Gaussian(mu[0], cov[0])
        try:
            kl = gaussian.kl_divergence(problem.target, pred)
        except ValueError:
            kl = float("nan")
        trajectory.append(
            (step, mu[0, 0], mu[0, 1], cov[0, 0, 0], cov[0, 0, 1], cov[0, 1, 1], kl,
             gaussian.w2_exact(pred, problem.target))
        )

    result = train(
        ds, spec, labels, eval_ds=eval_ds, mean_output_bias=init_mean,
        record_timing=record_timing, record_memory=False, callback=track, eval_every=track_every,
    )
    return Problem1Run(result, trajectory, problem.target)


# -- sinusoid ------------------------------------------------------------------


def run_sinusoid(loss="W2_bound", variant=1, n=datasets.SINUSOID_SAMPLES, seed=0, epochs=100, lr=1e-3,
                 batch=64, hidden_layers=4, hidden_width=50, label_source="pseudo", **train_kwargs):
    ds = datasets.gen_sinusoid(variant, n, seed)
    tr, te = datasets.train_test_split(ds, 0.2, seed)
    spec = make_spec(loss, 1, 1, hidden_layers, hidden_width, "tanh", lr=lr, epochs=epochs, batch=batch, seed=seed)
    labels = select_labels(spec, tr, label_source)
    return train(tr, spec, labels, eval_ds=te, **train_kwargs), tr, te


def select_labels(spec, ds, source="auto", k=None):
    """Square-root covariance labels for the training rows.

    ``auto`` uses ground truth for KL_calibrated when the dataset has it and
    pseudo-labels otherwise.
    """
    kinds = [spec.loss] + ([spec.schedule.then] if spec.schedule.then is not None else [])
    if not any(kd.needs_labels for kd in kinds):
        return None
    if source == "auto":
        source = "ground_truth" if (ds.has_ground_truth and spec.loss.name == "KL_calibrated") else "pseudo"
    if source == "ground_truth":
        return ground_truth_sqrt(ds)
    if source != "pseudo":
        raise ValueError(f"unknown label source {source!r}")
    return pseudolabel.pseudo_labels(ds, k if k is not None else spec.pseudo_k).sqrt_cov


# -- multivariate --------------------------------------------------------------


def multivariate_arch(dim):
    """Ten ELU hidden layers of width ``dim ** 2``."""
    return dict(hidden_layers=10, hidden_width=dim * dim, activation="elu")


def run_multivariate(losses, dim=8, seed=0, epochs=20, lr=1e-3, batch=64, n=None, arch=None,
                     label_source="pseudo", **train_kwargs):
    """Train several losses on the same split, initialization seed and batch order."""
    ds = datasets.gen_multivariate(dim, n, seed)
    tr, te = datasets.train_test_split(ds, 0.2, seed)
    arch = arch or multivariate_arch(dim)
    pl = None
    out = {}
    for loss in losses:
        spec = make_spec(loss, dim, dim, lr=lr, epochs=epochs, batch=batch, seed=seed, **arch)
        labels = None
        if spec.loss.needs_labels:
            if label_source == "pseudo":
                pl = pl if pl is not None else pseudolabel.pseudo_labels(tr)
                labels = pl.sqrt_cov
            else:
                labels = select_labels(spec, tr, label_source)
        out[str(spec.loss)] = train(tr, spec, labels, eval_ds=te, **train_kwargs)
    return out, tr, te


__all__ = [
    "TRAJECTORY_COLUMNS",
    "evaluate",
    "problem1_dataset",
    "run_problem1",
    "run_sinusoid",
    "run_multivariate",
    "select_labels",
]
