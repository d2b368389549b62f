"""Heteroscedastic regression with full-covariance Gaussian heads.

Closed-form Gaussian divergences, a 2-Wasserstein bound loss, Mahalanobis
neighborhood covariance pseudo-labels, and a small reverse-mode autodiff
stack to train mean/covariance MLP pairs with them.

The hot kernels (Jacobi eigensolver, Cholesky, neighborhood moments) come
from a compiled extension when it is built and from numpy otherwise; see
``hetreg.BACKEND``.
"""
from ._backend import BACKEND, available_backends
from .errors import (
    ConfigError,
    DimensionMismatch,
    HetRegError,
    NonFinite,
    NotPositiveDefinite,
)
from .gaussian import (
    Gaussian,
    SqrtGaussian,
    calibrated_kl,
    gaussian_nll,
    kl_divergence,
    trace_root_gap,
    w2_bound,
    w2_exact,
)
from .losses import LOSS_NAMES, LossKind, Schedule, TrainSpec, evaluate, make_spec, train
from .pseudolabel import PseudoLabelSet, pseudo_labels

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "available_backends",
    "ConfigError",
    "DimensionMismatch",
    "HetRegError",
    "NonFinite",
    "NotPositiveDefinite",
    "Gaussian",
    "SqrtGaussian",
    "calibrated_kl",
    "gaussian_nll",
    "kl_divergence",
    "trace_root_gap",
    "w2_bound",
    "w2_exact",
    "LOSS_NAMES",
    "LossKind",
    "Schedule",
    "TrainSpec",
    "evaluate",
    "make_spec",
    "train",
    "PseudoLabelSet",
    "pseudo_labels",
]
