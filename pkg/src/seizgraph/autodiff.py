"""Minimal reverse-mode automatic differentiation over numpy arrays.

Eager execution with an explicit tape: while a :class:`Tape` is active,
every differentiable op appends a backward closure; ``Tape.backward`` walks
the closures in exact reverse execution order and accumulates gradients
into ``Tensor.grad`` (a tensor consumed k times receives k contributions).
Outside a tape, ops run plain numpy with no recording overhead.

Double precision throughout; matmul follows numpy stacking semantics, which
is all the recurrent graph models need.
"""

import numpy as np
from scipy.special import expit


class DetachedTensorError(RuntimeError):
    """Backward was requested from a tensor with no recorded provenance."""


class Tensor:
    """A dense array plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_traced")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._traced = False

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, contribution: np.ndarray) -> None:
        if self.grad is None:
            self.grad = contribution
        else:
            self.grad = self.grad + contribution

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; constants and ndarrays are wrapped as non-tracked inputs
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


_TAPES: list = []


class Tape:
    """Ordered record of executed differentiable ops."""

    def __init__(self):
        self._records = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPES.pop()
        return False

    def __len__(self):
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` for every tensor reachable from ``loss``.

        The tape is cleared afterwards; parameter gradients survive on the
        tensors themselves.
        """
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss._traced:
            raise DetachedTensorError("loss tensor was not produced under this tape")
        loss.grad = np.ones_like(loss.data)
        for record in reversed(self._records):
            record()
        self._records.clear()


def _active_tape():
    return _TAPES[-1] if _TAPES else None


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: Tensor, *links) -> Tensor:
    """Register backward closures; links are (input_tensor, grad_fn) pairs."""
    tape = _active_tape()
    if tape is None:
        return out
    tracked = [(t, fn) for t, fn in links if t.requires_grad]
    if not tracked:
        return out
    out.requires_grad = True
    out._traced = True

    def backward_record():
        g = out.grad
        if g is None:
            return
        for t, fn in tracked:
            t._accumulate(fn(g))

    tape._records.append(backward_record)
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data + b.data)
    return _record(
        out,
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data - b.data)
    return _record(
        out,
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data * b.data)
    return _record(
        out,
        (a, lambda g: _unbroadcast(g * b.data, a.shape)),
        (b, lambda g: _unbroadcast(g * a.data, b.shape)),
    )


def neg(a) -> Tensor:
    a = _wrap(a)
    out = Tensor(-a.data)
    return _record(out, (a, lambda g: -g))


def _swap_last(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul operands must have at least 2 dimensions")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)
    return _record(
        out,
        (a, lambda g: _unbroadcast(g @ _swap_last(b.data), a.shape)),
        (b, lambda g: _unbroadcast(_swap_last(a.data) @ g, b.shape)),
    )


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    out = Tensor(expit(a.data))
    return _record(out, (a, lambda g: g * out.data * (1.0 - out.data)))


def tanh(a) -> Tensor:
    a = _wrap(a)
    out = Tensor(np.tanh(a.data))
    return _record(out, (a, lambda g: g * (1.0 - out.data**2)))


def softplus(a) -> Tensor:
    a = _wrap(a)
    out = Tensor(np.logaddexp(0.0, a.data))
    return _record(out, (a, lambda g: g * expit(a.data)))


def exp(a) -> Tensor:
    a = _wrap(a)
    out = Tensor(np.exp(a.data))
    return _record(out, (a, lambda g: g * out.data))


def log(a) -> Tensor:
    a = _wrap(a)
    if np.any(a.data <= 0.0):
        raise ValueError("log requires strictly positive input")
    out = Tensor(np.log(a.data))
    return _record(out, (a, lambda g: g / a.data))


def absolute(a) -> Tensor:
    a = _wrap(a)
    out = Tensor(np.abs(a.data))
    return _record(out, (a, lambda g: g * np.sign(a.data)))


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a, lambda g: g.reshape(a.shape)))


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def slice_fn(i):
        def fn(g):
            index = [slice(None)] * g.ndim
            index[axis] = slice(offsets[i], offsets[i + 1])
            return g[tuple(index)]

        return fn

    return _record(out, *[(t, slice_fn(i)) for i, t in enumerate(tensors)])


def slice_(a, key) -> Tensor:
    """Basic (non-fancy) slicing with gradient scatter on backward."""
    a = _wrap(a)
    out = Tensor(a.data[key])

    def fn(g):
        buf = np.zeros(a.shape, dtype=np.float64)
        buf[key] = g
        return buf

    return _record(out, (a, fn))


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def fn(g):
        if axis is None:
            return np.broadcast_to(g, a.shape).copy()
        if not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.shape).copy()

    return _record(out, (a, fn))


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def max_axis(a, axis: int) -> Tensor:
    """Max over one axis; backward routes to the first argmax on ties."""
    a = _wrap(a)
    idx = np.argmax(a.data, axis=axis)
    out = Tensor(np.max(a.data, axis=axis))

    def fn(g):
        buf = np.zeros(a.shape, dtype=np.float64)
        np.put_along_axis(
            buf, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis
        )
        return buf

    return _record(out, (a, fn))


def softmax(a, axis: int = -1) -> Tensor:
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s)

    def fn(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return s * (g - dot)

    return _record(out, (a, fn))


def logsumexp(a, axis: int = -1) -> Tensor:
    a = _wrap(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    total = e.sum(axis=axis, keepdims=True)
    out = Tensor((m + np.log(total)).squeeze(axis))
    soft = e / total

    def fn(g):
        return np.expand_dims(g, axis) * soft

    return _record(out, (a, fn))
