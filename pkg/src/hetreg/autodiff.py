"""Small reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` records the operation that produced it. Calling
:meth:`Tensor.backward` on a scalar walks the recorded graph once in reverse
topological order and accumulates ``.grad`` on every tensor created with
``requires_grad=True``.

Only the operations needed by the regression losses are provided.
"""
import threading
from contextlib import contextmanager

import numpy as np

from .errors import CycleDetected, ShapeMismatch

_stops = threading.local()


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_pullback", "op", "name")

    def __init__(self, value, requires_grad=False, name=None, _parents=(), _pullback=None, op="leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._pullback = _pullback
        self.op = op
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape})"

    def numpy(self):
        return self.value

    def zero_grad(self):
        self.grad = None

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def backward(self):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf that requires grad."""
        if self.value.size != 1:
            raise ShapeMismatch(f"backward needs a scalar, got shape {self.shape}")
        order = _topological(self)
        grads = {id(self): np.ones_like(self.value)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._pullback is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            parent_grads = node._pullback(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def _topological(root):
    order = []
    state = {}  # id -> 1 visiting, 2 done
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        key = id(node)
        if expanded:
            state[key] = 2
            order.append(node)
            continue
        mark = state.get(key)
        if mark == 2:
            continue
        if mark == 1:
            raise CycleDetected("computation graph contains a cycle")
        state[key] = 1
        stack.append((node, True))
        for parent in node._parents:
            if not parent.requires_grad:
                continue
            pm = state.get(id(parent))
            if pm == 1:
                raise CycleDetected("computation graph contains a cycle")
            if pm is None:
                stack.append((parent, False))
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(value, name=None):
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"cannot broadcast {a.shape} with {b.shape}") from None


# -- arithmetic ----------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return Tensor(
        a.value + b.value,
        _parents=(a, b),
        _pullback=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        op="add",
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return Tensor(
        a.value - b.value,
        _parents=(a, b),
        _pullback=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        op="sub",
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return Tensor(
        a.value * b.value,
        _parents=(a, b),
        _pullback=lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
        op="mul",
    )


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    out = a.value / b.value
    return Tensor(
        out,
        _parents=(a, b),
        _pullback=lambda g: (
            _unbroadcast(g / b.value, a.shape),
            _unbroadcast(-g * out / b.value, b.shape),
        ),
        op="div",
    )


def scale(a, c):
    c = float(c)
    return Tensor(a.value * c, _parents=(a,), _pullback=lambda g: (g * c,), op="scale")


def matmul(a, b):
    """Matrix product; batched over leading axes like ``numpy.matmul``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul of {a.shape} and {b.shape}")
    return Tensor(
        a.value @ b.value,
        _parents=(a, b),
        _pullback=lambda g: (
            _unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.shape),
            _unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.shape),
        ),
        op="matmul",
    )


# -- elementwise ---------------------------------------------------------------


def _unary(a, out, dfdx, op):
    return Tensor(out, _parents=(a,), _pullback=lambda g: (g * dfdx,), op=op)


def tanh(a):
    out = np.tanh(a.value)
    return _unary(a, out, 1.0 - out * out, "tanh")


def elu(a):
    x = a.value
    neg = np.expm1(np.minimum(x, 0.0))
    out = np.where(x > 0, x, neg)
    return _unary(a, out, np.where(x > 0, 1.0, neg + 1.0), "elu")


def exp(a):
    out = np.exp(a.value)
    return _unary(a, out, out, "exp")


def log(a):
    return _unary(a, np.log(a.value), 1.0 / a.value, "log")


def softplus(a):
    x = a.value
    return _unary(a, np.logaddexp(0.0, x), 0.5 * (1.0 + np.tanh(0.5 * x)), "softplus")


def square(a):
    return _unary(a, a.value * a.value, 2.0 * a.value, "square")


def power(a, p):
    """``a ** p`` for positive ``a``."""
    out = a.value**p
    return _unary(a, out, p * out / a.value, "power")


def where(mask, a, b):
    mask = np.asarray(mask, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        np.where(mask, a.value, b.value),
        _parents=(a, b),
        _pullback=lambda g: (
            _unbroadcast(np.where(mask, g, 0.0), a.shape),
            _unbroadcast(np.where(mask, 0.0, g), b.shape),
        ),
        op="where",
    )


def stop_gradient(a):
    """Same value, no gradient path back to ``a``.

    Inside :func:`frozen_stops` the value is recorded, or replayed from an
    earlier recording.
    """
    tape = getattr(_stops, "tape", None)
    if tape is None:
        return Tensor(a.value.copy(), op="stop_gradient")
    if tape.replay:
        value = tape.values[tape.pos]
        tape.pos += 1
    else:
        value = a.value.copy()
        tape.values.append(value)
    return Tensor(value.copy(), op="stop_gradient")


class _StopTape:
    def __init__(self):
        self.values = []
        self.replay = False
        self.pos = 0


@contextmanager
def frozen_stops(tape=None):
    """Record stop-gradient values, or replay ``tape`` if given.

    Finite differences of an objective with stopped terms must hold those
    terms fixed to match what ``backward()`` computes.
    """
    if tape is None:
        tape = _StopTape()
    else:
        tape.replay = True
        tape.pos = 0
    prev = getattr(_stops, "tape", None)
    _stops.tape = tape
    try:
        yield tape
    finally:
        _stops.tape = prev


# -- reductions and reshaping --------------------------------------------------


def reduce_sum(a, axis=None):
    if axis is None:
        return Tensor(
            np.sum(a.value),
            _parents=(a,),
            _pullback=lambda g: (np.broadcast_to(g, a.shape).copy(),),
            op="sum",
        )
    axes = (axis,) if np.isscalar(axis) else tuple(axis)
    axes = tuple(ax % a.ndim for ax in axes)

    def pullback(g):
        return (np.broadcast_to(np.expand_dims(g, axes), a.shape).copy(),)

    return Tensor(np.sum(a.value, axis=axes), _parents=(a,), _pullback=pullback, op="sum")


def mean(a, axis=None):
    count = a.value.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return scale(reduce_sum(a, axis), 1.0 / count)


def frobenius_sq(a):
    """Sum of squares over the last two axes (per matrix in a batch)."""
    return reduce_sum(square(a), axis=(-2, -1))


def reshape(a, shape):
    return Tensor(
        a.value.reshape(shape),
        _parents=(a,),
        _pullback=lambda g: (g.reshape(a.shape),),
        op="reshape",
    )


def transpose(a):
    """Swap the last two axes."""
    return Tensor(
        np.swapaxes(a.value, -1, -2),
        _parents=(a,),
        _pullback=lambda g: (np.swapaxes(g, -1, -2),),
        op="transpose",
    )


def diagonal(a):
    """Diagonal of each matrix in a batch, shape ``(..., n)``."""
    n = a.shape[-1]
    eye = np.eye(n, dtype=bool)
    return Tensor(
        np.diagonal(a.value, axis1=-2, axis2=-1).copy(),
        _parents=(a,),
        _pullback=lambda g: (np.where(eye, g[..., :, None], 0.0),),
        op="diagonal",
    )


def scatter_lower(v, n):
    """Fill the lower triangle (row-major, diagonal included) from the last axis of ``v``."""
    rows, cols = np.tril_indices(n)
    if v.shape[-1] != rows.size:
        raise ShapeMismatch(f"need {rows.size} entries for a {n}x{n} lower triangle, got {v.shape[-1]}")
    out = np.zeros(v.shape[:-1] + (n, n))
    out[..., rows, cols] = v.value
    return Tensor(out, _parents=(v,), _pullback=lambda g: (g[..., rows, cols],), op="scatter_lower")


def tri_solve(L, b):
    """``L^{-1} b`` for a batch of lower-triangular ``L`` (``b`` has shape ``(..., n, p)``)."""
    if L.shape[-1] != L.shape[-2] or b.shape[-2] != L.shape[-1]:
        raise ShapeMismatch(f"tri_solve of {L.shape} and {b.shape}")
    x = np.linalg.solve(L.value, b.value)
    lower = np.tril(np.ones(L.shape[-2:], dtype=bool))

    def pullback(g):
        gb = np.linalg.solve(np.swapaxes(L.value, -1, -2), g)
        gL = -(gb @ np.swapaxes(x, -1, -2))
        return (_unbroadcast(np.where(lower, gL, 0.0), L.shape), _unbroadcast(gb, b.shape))

    return Tensor(x, _parents=(L, as_tensor(b)), _pullback=pullback, op="tri_solve")


def quadratic_form(v, chol):
    """``v^T (L L^T)^{-1} v`` per batch row, with ``v`` shaped ``(..., n)``."""
    z = tri_solve(chol, reshape(v, v.shape + (1,)))
    return reduce_sum(square(z), axis=(-2, -1))


def logdet_from_chol(chol):
    """``log det(L L^T) = 2 sum log diag(L)`` per matrix."""
    return scale(reduce_sum(log(diagonal(chol)), axis=-1), 2.0)


# -- gradient checking ---------------------------------------------------------


def numerical_grad(f, x, h=1e-5):
    # C order so the flat views below alias x and g
    x = np.array(x, dtype=np.float64, order="C")
    g = np.zeros_like(x, order="C")
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x).value)
        flat[i] = orig - h
        fm = float(f(x).value)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def relative_errors(analytic, numeric, rel=1e-4, abs_floor=1e-7):
    """Per-coordinate ``|a - n| / max(|a|, |n|, abs_floor / rel)``.

    A coordinate passes when this is at most ``rel``, i.e. when
    ``|a - n| <= max(rel * max(|a|, |n|), abs_floor)``.
    """
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), abs_floor / rel)
    return np.abs(analytic - numeric) / denom


def grad_check(f, point, h=1e-5):
    """Largest relative error between ``backward()`` and central differences.

    ``f`` maps a tensor to a scalar tensor; ``point`` is the array at which
    both gradients are taken. Stopped values are held at their values at
    ``point`` while differencing.
    """
    x = parameter(point)
    with frozen_stops() as tape:
        out = f(x)
    out.backward()
    analytic = np.zeros_like(x.value) if x.grad is None else x.grad

    def replayed(v):
        with frozen_stops(tape):
            return f(Tensor(v))

    numeric = numerical_grad(replayed, point, h)
    return float(np.max(relative_errors(analytic, numeric), initial=0.0))
