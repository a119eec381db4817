"""Dense float64 ops with a small reverse-mode tape.

Every op here works on plain numpy arrays and returns a plain array.  When at
least one argument is a :class:`Tensor` the result is a :class:`Tensor` and the
op is appended to that tensor's :class:`Tape`, so :func:`backward` can replay
the record in reverse.  The cells are written once against these ops and run
unchanged for evaluation (arrays) and for training (tensors).
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "NonFiniteError",
    "Tensor",
    "Tape",
    "add",
    "sub",
    "mul",
    "matmul",
    "transpose",
    "relu",
    "tanh",
    "sigmoid",
    "identity",
    "activation",
    "total",
    "take_rows",
    "slice_last",
    "softmax",
    "log_softmax",
    "softmax_cross_entropy",
    "backward",
    "finite_difference_gradient",
    "logit",
]


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf."""


class Tensor:
    """A value recorded on a tape."""

    __slots__ = ("value", "tape", "name", "requires_grad")
    __array_ufunc__ = None  # ndarray <op> Tensor defers to the reflected Tensor method

    def __init__(self, value, tape, name=None, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.name = name
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.value.shape}{label})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return mul(-1.0, self)


class Tape:
    """Ordered record of primitive ops.

    ``ops`` holds ``(op_name, inputs, output, ctx)`` tuples in recording order;
    an op's inputs are always created before it, so the list is topologically
    sorted by construction.
    """

    def __init__(self):
        self.ops = []
        self.leaves = []

    def leaf(self, value, name=None, requires_grad=True):
        if name is None:
            name = f"leaf{len(self.leaves)}"
        t = Tensor(np.array(value, dtype=np.float64, copy=True), self, name, requires_grad)
        _check_finite("leaf", t.value)
        self.leaves.append(t)
        return t

    def __len__(self):
        return len(self.ops)


def _val(x):
    if isinstance(x, Tensor):
        return x.value
    return np.asarray(x, dtype=np.float64)


def _check_finite(name, value):
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"non-finite value produced by {name}")


def _tape_of(inputs):
    tape = None
    for x in inputs:
        if isinstance(x, Tensor):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ValueError("inputs recorded on different tapes")
    return tape


def _record(name, out, inputs, ctx=None):
    _check_finite(name, out)
    tape = _tape_of(inputs)
    if tape is None:
        return out
    result = Tensor(out, tape)
    tape.ops.append((name, inputs, result, ctx))
    return result


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# --------------------------------------------------------------------------
# forward ops


def add(a, b):
    return _record("add", _val(a) + _val(b), (a, b))


def sub(a, b):
    return _record("sub", _val(a) - _val(b), (a, b))


def mul(a, b):
    return _record("mul", _val(a) * _val(b), (a, b))


def matmul(a, b):
    return _record("matmul", _val(a) @ _val(b), (a, b))


def transpose(a):
    return _record("transpose", _val(a).T, (a,))


def relu(x):
    v = _val(x)
    mask = v > 0
    return _record("relu", np.where(mask, v, 0.0), (x,), mask)


def tanh(x):
    out = np.tanh(_val(x))
    return _record("tanh", out, (x,), out)


def sigmoid(x):
    v = _val(x)
    # split form avoids exp overflow for large |v|
    e = np.exp(-np.abs(v))
    out = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _record("sigmoid", out, (x,), out)


def identity(x):
    return x


_ACTIVATIONS = {"tanh": tanh, "relu": relu, "identity": identity, "sigmoid": sigmoid}


def activation(name):
    """Look up an activation function by name."""
    try:
        return _ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}") from None


def total(x):
    """Sum of all entries, as a 0-d value."""
    v = _val(x)
    return _record("total", np.asarray(v.sum()), (x,), v.shape)


def take_rows(table, ids):
    """Gather rows of a 2-d table (embedding lookup)."""
    ids = np.asarray(ids, dtype=np.intp)
    v = _val(table)
    return _record("take_rows", v[ids], (table,), (ids, v.shape))


def slice_last(x, start, stop):
    v = _val(x)
    return _record("slice_last", v[..., start:stop], (x,), (start, stop, v.shape))


def log_softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def softmax_cross_entropy(logits, targets, reduction="mean"):
    """Cross-entropy of integer targets under softmax(logits).

    ``logits`` is (C,) or (B, C); ``reduction`` is "mean" or "sum" over rows.
    """
    z = _val(logits)
    targets = np.asarray(targets, dtype=np.intp)
    lp = log_softmax(z)
    if z.ndim == 1:
        nll = -lp[targets]
        rows = 1
    else:
        nll = -lp[np.arange(z.shape[0]), targets]
        rows = z.shape[0]
    loss = nll.sum()
    if reduction == "mean":
        loss = loss / rows
    elif reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    scale = 1.0 / rows if reduction == "mean" else 1.0
    return _record("softmax_xent", np.asarray(loss), (logits,), (np.exp(lp), targets, scale))


def logit(p):
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError("logit needs p in (0, 1)")
    return float(np.log(p) - np.log1p(-p))


# --------------------------------------------------------------------------
# backward rules: fn(g, ctx, *input_values) -> tuple of input grads


def _add_back(g, ctx, a, b):
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _sub_back(g, ctx, a, b):
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def _mul_back(g, ctx, a, b):
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _matmul_back(g, ctx, a, b):
    if a.ndim == 1 and b.ndim == 1:
        return g * b, g * a
    if a.ndim == 1:
        return b @ g, np.outer(a, g)
    if b.ndim == 1:
        return np.outer(g, b), a.T @ g
    return g @ b.T, a.T @ g


def _transpose_back(g, ctx, a):
    return (g.T,)


def _relu_back(g, mask, x):
    return (np.where(mask, g, 0.0),)


def _tanh_back(g, out, x):
    return (g * (1.0 - out * out),)


def _sigmoid_back(g, out, x):
    return (g * out * (1.0 - out),)


def _total_back(g, shape, x):
    return (np.broadcast_to(g, shape).copy(),)


def _take_rows_back(g, ctx, table):
    ids, shape = ctx
    out = np.zeros(shape)
    np.add.at(out, ids, g)
    return (out,)


def _slice_last_back(g, ctx, x):
    start, stop, shape = ctx
    out = np.zeros(shape)
    out[..., start:stop] = g
    return (out,)


def _xent_back(g, ctx, logits):
    probs, targets, scale = ctx
    d = probs.copy()
    if d.ndim == 1:
        d[targets] -= 1.0
    else:
        d[np.arange(d.shape[0]), targets] -= 1.0
    return (d * (g * scale),)


BACKWARD_RULES = {
    "add": _add_back,
    "sub": _sub_back,
    "mul": _mul_back,
    "matmul": _matmul_back,
    "transpose": _transpose_back,
    "relu": _relu_back,
    "tanh": _tanh_back,
    "sigmoid": _sigmoid_back,
    "total": _total_back,
    "take_rows": _take_rows_back,
    "slice_last": _slice_last_back,
    "softmax_xent": _xent_back,
}


def backward(tape, loss):
    """Gradients of a scalar ``loss`` with respect to every trainable leaf.

    Returns ``{leaf.name: ndarray}``; leaves the loss does not depend on get
    zeros.
    """
    if not isinstance(loss, Tensor) or loss.tape is not tape:
        raise ValueError("loss is not a node of this tape (dangling node)")
    if loss.value.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")
    grads = {id(loss): np.ones_like(loss.value)}
    for name, inputs, out, ctx in reversed(tape.ops):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        parts = BACKWARD_RULES[name](g, ctx, *(_val(x) for x in inputs))
        for x, gx in zip(inputs, parts):
            if not isinstance(x, Tensor):
                continue
            key = id(x)
            if key in grads:
                grads[key] = grads[key] + gx
            else:
                grads[key] = gx
    result = {}
    for leaf in tape.leaves:
        if leaf.requires_grad:
            g = grads.get(id(leaf))
            result[leaf.name] = np.zeros_like(leaf.value) if g is None else np.asarray(g).reshape(leaf.shape)
    return result


def finite_difference_gradient(f, x, step=1e-5):
    """Central-difference gradient of scalar ``f`` at ``x``."""
    if not step > 0:
        raise ValueError("step must be positive")
    x = np.array(x, dtype=np.float64, copy=True)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(f(x))
        flat[i] = orig - step
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"non-finite function value at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad
