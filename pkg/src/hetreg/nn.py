"""Fully connected networks, covariance heads and AdamW."""
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ShapeMismatch

ACTIVATIONS = {"tanh": ad.tanh, "elu": ad.elu}
POSITIVE_FLOOR = 1e-6
# softplus(x) + 1e-6 == 1
UNIT_RAW = math.log(math.expm1(1.0 - POSITIVE_FLOOR))
CHECKPOINT_FORMAT = "hetreg-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MLPConfig:
    input_dim: int
    output_dim: int
    hidden_layers: int = 4
    hidden_width: int = 50
    activation: str = "tanh"

    def __post_init__(self):
        if self.hidden_layers < 0:
            raise ValueError("hidden_layers must be >= 0")
        if min(self.input_dim, self.output_dim, self.hidden_width) < 1:
            raise ValueError("layer widths must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {sorted(ACTIVATIONS)}")

    @property
    def widths(self):
        return [self.input_dim] + [self.hidden_width] * self.hidden_layers + [self.output_dim]


class MLP:
    """Affine layers with an activation after every hidden layer; linear output."""

    def __init__(self, cfg, params):
        self.cfg = cfg
        self.params = params

    @classmethod
    def init(cls, cfg, rng, output_bias=None):
        """Glorot-uniform weights, zero biases (optionally a fixed output bias)."""
        params = []
        widths = cfg.widths
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            params.append(ad.parameter(rng.uniform(-limit, limit, (fan_in, fan_out)), name=f"W{i}"))
            params.append(ad.parameter(np.zeros(fan_out), name=f"b{i}"))
        if output_bias is not None:
            params[-1].value[:] = output_bias
        return cls(cfg, params)

    def __call__(self, x):
        return mlp_forward(self.cfg, self.params, x)

    def copy(self):
        return MLP(self.cfg, [ad.parameter(p.value.copy(), name=p.name) for p in self.params])

    def state(self):
        return {p.name: p.value.copy() for p in self.params}


def mlp_forward(cfg, params, x):
    x = ad.as_tensor(x)
    if x.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise ShapeMismatch(f"expected (batch, {cfg.input_dim}) inputs, got {x.shape}")
    act = ACTIVATIONS[cfg.activation]
    h = x
    n_layers = len(params) // 2
    for i in range(n_layers):
        h = ad.matmul(h, params[2 * i]) + params[2 * i + 1]
        if i < n_layers - 1:
            h = act(h)
    return h


# -- covariance heads ----------------------------------------------------------


@dataclass(frozen=True)
class CovHead:
    """Map raw network outputs to a covariance parameterization.

    ``cholesky_full``: lower-triangular factor, diagonal through softplus.
    ``diagonal``: per-dimension variances through softplus.
    ``sym_sqrt``: symmetric square-root factor ``(A + A^T) / 2``.
    """

    kind: str
    dim: int

    KINDS = ("cholesky_full", "diagonal", "sym_sqrt")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"head kind must be one of {self.KINDS}")

    @property
    def raw_dim(self):
        n = self.dim
        return {"cholesky_full": n * (n + 1) // 2, "diagonal": n, "sym_sqrt": n * n}[self.kind]

    def identity_raw(self):
        """Raw output for which the implied covariance is the identity."""
        n = self.dim
        if self.kind == "cholesky_full":
            rows, cols = np.tril_indices(n)
            return np.where(rows == cols, UNIT_RAW, 0.0)
        if self.kind == "diagonal":
            return np.full(n, UNIT_RAW)
        return np.eye(n).reshape(-1)

    def _diag_mask(self):
        rows, cols = np.tril_indices(self.dim)
        return rows == cols

    def factor(self, raw):
        """Graph node for the head's parameterization of a batch of raw outputs."""
        n = self.dim
        if raw.shape[-1] != self.raw_dim:
            raise ShapeMismatch(f"{self.kind} head expects {self.raw_dim} raw outputs, got {raw.shape[-1]}")
        if self.kind == "cholesky_full":
            positive = ad.softplus(raw) + POSITIVE_FLOOR
            return ad.scatter_lower(ad.where(self._diag_mask(), positive, raw), n)
        if self.kind == "diagonal":
            return ad.softplus(raw) + POSITIVE_FLOOR
        a = ad.reshape(raw, raw.shape[:-1] + (n, n))
        return ad.scale(a + ad.transpose(a), 0.5)

    def covariance(self, raw):
        """Implied covariance matrices (numpy, batch x n x n)."""
        f = self.factor(ad.as_tensor(raw)).value
        if self.kind == "cholesky_full":
            return f @ np.swapaxes(f, -1, -2)
        if self.kind == "diagonal":
            return f[..., :, None] * np.eye(self.dim)
        return f @ f


# -- optimizer -----------------------------------------------------------------


class AdamW:
    """Adam with decoupled weight decay.

    ``p <- p - lr * wd * p`` followed by the bias-corrected Adam step.
    """

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self, grads=None):
        if grads is None:
            grads = [p.grad for p in self.params]
        if len(grads) != len(self.params):
            raise ShapeMismatch(f"{len(grads)} gradients for {len(self.params)} parameters")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g is None:
                g = np.zeros_like(p.value)
            if g.shape != p.value.shape:
                raise ShapeMismatch(f"gradient {g.shape} vs parameter {p.value.shape}")
            p.value *= 1.0 - self.lr * self.weight_decay
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(path, nets):
    """Write named parameter tensors to ``.npz``.

    ``nets`` maps a prefix (``"mean"``, ``"cov"``) to an :class:`MLP`. Keys
    are ``<prefix>/<param name>``; ``__format__`` and ``__version__`` form the
    header and ``<prefix>/__config__`` stores the layer configuration.
    """
    arrays = {
        "__format__": np.array(CHECKPOINT_FORMAT),
        "__version__": np.array(CHECKPOINT_VERSION),
    }
    for prefix, net in nets.items():
        c = net.cfg
        arrays[f"{prefix}/__config__"] = np.array(
            [c.input_dim, c.output_dim, c.hidden_layers, c.hidden_width, list(ACTIVATIONS).index(c.activation)]
        )
        for p in net.params:
            arrays[f"{prefix}/{p.name}"] = p.value
    np.savez(path, **arrays)


def load_checkpoint(path):
    with np.load(path) as data:
        if str(data["__format__"]) != CHECKPOINT_FORMAT:
            raise ValueError(f"{path} is not a checkpoint")
        version = int(data["__version__"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        nets = {}
        for key in data.files:
            if key.endswith("/__config__"):
                prefix = key.split("/")[0]
                i, o, hl, hw, act = (int(v) for v in data[key])
                cfg = MLPConfig(i, o, hl, hw, list(ACTIVATIONS)[act])
                n_layers = hl + 1
                params = []
                for layer in range(n_layers):
                    params.append(ad.parameter(data[f"{prefix}/W{layer}"], name=f"W{layer}"))
                    params.append(ad.parameter(data[f"{prefix}/b{layer}"], name=f"b{layer}"))
                nets[prefix] = MLP(cfg, params)
    return nets
