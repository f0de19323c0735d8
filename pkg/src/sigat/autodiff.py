"""Small reverse-mode automatic differentiation engine over float64 numpy arrays.

A :class:`Tape` records every operation whose inputs need gradients.
Parameters are registered on the tape by name and ``Tape.backward`` returns
their gradients as a dict, so a model keeps its parameters as plain arrays
and builds a fresh tape per forward pass::

    tape = Tape()
    w = tape.parameter("w", np.ones((3, 2)))
    loss = sum_all(matmul(tape.constant(x), w))
    grads = tape.backward(loss)
"""

import numpy as np

from .exceptions import ConfigError, ContractError, DeterminismError, NumericError, ShapeError


class Tensor:
    __slots__ = ("value", "grad", "tape", "requires_grad", "name")

    def __init__(self, value, tape=None, requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.tape = tape
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def item(self):
        return float(self.value)

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"<Tensor{tag} shape={self.shape} requires_grad={self.requires_grad}>"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        if np.isscalar(other):
            return scalar_mul(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    def __init__(self):
        self._records = []
        self.parameters = {}

    def __len__(self):
        return len(self._records)

    def parameter(self, name, value):
        if name in self.parameters:
            raise ContractError(f"parameter {name!r} registered twice")
        t = Tensor(np.array(value, dtype=np.float64), self, True, name)
        self.parameters[name] = t
        return t

    def constant(self, value):
        return Tensor(value, self, False)

    def record(self, value, inputs, backward_fn):
        if not np.all(np.isfinite(value)):
            raise NumericError("non-finite value produced by " + backward_fn.__qualname__.split(".")[0])
        needs = any(t.requires_grad for t in inputs)
        out = Tensor(value, self, needs)
        if needs:
            self._records.append((out, inputs, backward_fn))
        return out

    def zero_grad(self):
        for t in self.parameters.values():
            t.grad = None
        for out, inputs, _ in self._records:
            out.grad = None

    def backward(self, loss):
        """Gradients of scalar ``loss`` with respect to every registered parameter."""
        if loss.value.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.shape}")
        if loss.tape is not self:
            raise ContractError("loss was not recorded on this tape")
        self.zero_grad()
        loss.grad = np.ones_like(loss.value)
        for out, inputs, fn in reversed(self._records):
            if out.grad is None:
                continue
            grads = fn(out.grad)
            for t, g in zip(inputs, grads):
                if g is None or not t.requires_grad:
                    continue
                t.grad = g if t.grad is None else t.grad + g
            if out.name is None:
                out.grad = None
        result = {}
        for name, t in self.parameters.items():
            result[name] = np.zeros_like(t.value) if t.grad is None else t.grad
        return result


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Tensor) and x.tape is not None:
            return x.tape
    return Tape()


def _wrap(x, tape):
    return x if isinstance(x, Tensor) else Tensor(x, tape)


def _inputs(*xs):
    tape = _tape_of(*xs)
    return (tape,) + tuple(_wrap(x, tape) for x in xs)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def matmul(a, b):
    """Matrix product with numpy batch broadcasting over leading axes."""
    tape, a, b = _inputs(a, b)
    if a.value.ndim < 2 or b.value.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    try:
        with np.errstate(over="ignore", invalid="ignore"):  # record() reports non-finite values
            value = np.matmul(a.value, b.value)
    except ValueError as exc:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}") from exc

    def matmul_backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.value, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.value, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return tape.record(value, (a, b), matmul_backward)


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from exc


def add(a, b):
    tape, a, b = _inputs(a, b)
    _broadcast_shape(a, b, "add")

    def add_backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return tape.record(a.value + b.value, (a, b), add_backward)


def mul(a, b):
    tape, a, b = _inputs(a, b)
    _broadcast_shape(a, b, "mul")

    def mul_backward(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return tape.record(a.value * b.value, (a, b), mul_backward)


def scalar_mul(a, c):
    tape, a = _inputs(a)
    c = float(c)

    def scalar_mul_backward(g):
        return (g * c,)

    return tape.record(a.value * c, (a,), scalar_mul_backward)


def concat(tensors, axis=-1):
    tape = _tape_of(*tensors)
    tensors = tuple(_wrap(t, tape) for t in tensors)
    try:
        value = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError("concat shape mismatch: " + ", ".join(str(t.shape) for t in tensors)) from exc
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def concat_backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return tape.record(value, tensors, concat_backward)


def concat_rows(tensors):
    """Join along the feature (last) axis, e.g. ``[Qh_i || Qh_j]``."""
    return concat(tensors, axis=-1)


def leaky_relu(a, slope=0.2):
    tape, a = _inputs(a)
    slope_mask = np.where(a.value > 0, 1.0, slope)

    def leaky_relu_backward(g):
        return (g * slope_mask,)

    return tape.record(a.value * slope_mask, (a,), leaky_relu_backward)


def elu(a):
    tape, a = _inputs(a)
    neg = np.expm1(np.minimum(a.value, 0.0))
    value = np.where(a.value > 0, a.value, neg)
    slope = np.where(a.value > 0, 1.0, neg + 1.0)

    def elu_backward(g):
        return (g * slope,)

    return tape.record(value, (a,), elu_backward)


def relu(a):
    return leaky_relu(a, 0.0)


def exp(a):
    tape, a = _inputs(a)
    with np.errstate(over="ignore"):
        value = np.exp(a.value)

    def exp_backward(g):
        return (g * value,)

    return tape.record(value, (a,), exp_backward)


def log(a):
    tape, a = _inputs(a)
    if np.any(a.value <= 0):
        raise NumericError("log of non-positive value")

    def log_backward(g):
        return (g / a.value,)

    return tape.record(np.log(a.value), (a,), log_backward)


def _subset_mask(shape, subset):
    subset = np.asarray(subset)
    if subset.dtype == bool:
        if subset.shape != shape:
            raise ShapeError(f"subset mask shape {subset.shape} does not match logits {shape}")
        mask = subset
    else:
        if len(shape) != 1:
            raise ShapeError("index subsets are only accepted for 1-D logits; pass a boolean mask")
        mask = np.zeros(shape, dtype=bool)
        mask[subset.astype(int)] = True
    if not np.all(mask.any(axis=-1)):
        raise ContractError("softmax subset is empty for at least one row")
    return mask


def softmax_over_index_set(logits, subset):
    """Softmax along the last axis restricted to ``subset``.

    ``subset`` is an index list (1-D logits) or a boolean mask shaped like
    ``logits``. Entries outside the subset are exactly zero in the output and
    receive exactly zero adjoint.
    """
    tape, x = _inputs(logits)
    mask = _subset_mask(x.shape, subset)
    shifted = np.where(mask, x.value, -np.inf)
    shifted = shifted - shifted.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)

    def softmax_backward(g):
        return (p * (g - np.sum(g * p, axis=-1, keepdims=True)),)

    return tape.record(p, (x,), softmax_backward)


def softmax(logits):
    return softmax_over_index_set(logits, np.ones(np.shape(_wrap(logits, None).value), dtype=bool))


def mean(a, axis):
    tape, a = _inputs(a)
    n = a.shape[axis]

    def mean_backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape) / n,)

    return tape.record(a.value.mean(axis=axis), (a,), mean_backward)


def mean_over_rows(a):
    """Average over the node (second to last) axis."""
    return mean(a, axis=-2)


def sum_all(a):
    tape, a = _inputs(a)

    def sum_backward(g):
        return (np.full(a.shape, float(g)),)

    return tape.record(np.sum(a.value), (a,), sum_backward)


def gather_rows(a, index, axis=-2):
    """Select rows of ``a`` along ``axis``; ``index`` may be any integer array."""
    tape, a = _inputs(a)
    index = np.asarray(index, dtype=int)
    axis = axis % a.value.ndim
    value = np.take(a.value, index, axis=axis)

    def gather_backward(g):
        out = np.zeros(a.shape)
        # move the gathered axes to the front so add.at scatters along one axis
        moved = np.moveaxis(out, axis, 0)
        g_moved = np.moveaxis(g, tuple(range(axis, axis + index.ndim)), tuple(range(index.ndim)))
        np.add.at(moved, index, g_moved)
        return (out,)

    return tape.record(value, (a,), gather_backward)


def scatter_rows(values, index, n):
    """Place ``values[..., i, j]`` at column ``index[i, j]`` of an (..., M, n) zero array.

    Column indices must be distinct within each row.
    """
    tape, v = _inputs(values)
    index = np.asarray(index, dtype=int)
    if v.shape[-2:] != index.shape:
        raise ShapeError(f"scatter index {index.shape} does not match values {v.shape}")
    rows = np.arange(index.shape[0])[:, None]
    value = np.zeros(v.shape[:-1] + (n,))
    value[..., rows, index] = v.value

    def scatter_backward(g):
        return (g[..., rows, index],)

    return tape.record(value, (v,), scatter_backward)


def transpose(a, axes):
    tape, a = _inputs(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def transpose_backward(g):
        return (np.transpose(g, inverse),)

    return tape.record(np.transpose(a.value, axes), (a,), transpose_backward)


def reshape(a, shape):
    tape, a = _inputs(a)
    try:
        value = a.value.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}") from exc

    def reshape_backward(g):
        return (g.reshape(a.shape),)

    return tape.record(value, (a,), reshape_backward)


def nll(probs, label, floor=1e-12):
    """``-log(max(probs[label], floor))`` for a 1-D probability vector."""
    tape, p = _inputs(probs)
    q = p.value[label]
    clamped = q <= floor

    def nll_backward(g):
        out = np.zeros(p.shape)
        if not clamped:
            out[label] = -float(g) / q
        return (out,)

    return tape.record(-np.log(max(q, floor)), (p,), nll_backward)


def grad_check(closure, params, epsilon=1e-5):
    """Largest relative error between tape gradients and central differences.

    ``closure(params)`` must build a fresh tape, register every entry of
    ``params`` under its key with ``Tape.parameter`` and return the scalar
    loss tensor.
    """
    if not 1e-7 <= epsilon <= 1e-4:
        raise ConfigError(f"epsilon must be in [1e-7, 1e-4], got {epsilon}")
    params = {name: np.array(v, dtype=np.float64) for name, v in params.items()}
    loss = closure(params)
    again = closure(params)
    if loss.item() != again.item():
        raise DeterminismError(f"closure returned {loss.item()!r} then {again.item()!r} for identical input")
    ad = loss.tape.backward(loss)

    worst = 0.0
    for name, base in params.items():
        g_ad = ad[name]
        for idx in np.ndindex(base.shape):
            shifted = dict(params)
            plus = base.copy()
            plus[idx] += epsilon
            minus = base.copy()
            minus[idx] -= epsilon
            shifted[name] = plus
            f_plus = closure(shifted).item()
            shifted[name] = minus
            f_minus = closure(shifted).item()
            g_fd = (f_plus - f_minus) / (2.0 * epsilon)
            err = abs(g_ad[idx] - g_fd) / max(1e-8, abs(g_ad[idx]) + abs(g_fd))
            worst = max(worst, err)
    return worst
