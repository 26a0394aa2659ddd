"""Reverse-mode automatic differentiation over dense float64 tensors.

Values are numpy arrays in row-major order. While a ``Tape`` is active,
every operation whose inputs require gradients records a backward rule;
``backward`` replays the records in reverse and accumulates gradients into
the ``grad`` slot of every tensor that requires them. Tapes are rebuilt on
every forward pass (define-by-run), so unrolled recurrences of varying
length need no special handling.

Repeated ``backward`` calls without clearing gradients accumulate: each
call adds a full fresh adjoint pass into ``grad``. That is the mechanism
mini-batch accumulation relies on.

Tapes and their tensors form a single-threaded unit of work; the active
tape is thread-local, so independent tapes on different threads do not
interact. Parameter data arrays must not be mutated between the forward
pass and ``backward`` (optimizer updates replace arrays after the fact).
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import ContractError, DomainError, ShapeError

_STATE = threading.local()


def _active_tape():
    return getattr(_STATE, "tape", None)


class Tensor:
    """Dense float64 value with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.tape = None

    @classmethod
    def _wrap(cls, array: np.ndarray) -> "Tensor":
        # Fast path for op outputs: array is already a fresh float64 ndarray.
        t = cls.__new__(cls)
        t.data = array
        t.requires_grad = False
        t.grad = None
        t.tape = None
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() requires a size-1 tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class Tape:
    """Ordered record of executed operations for one forward pass.

    Entries are appended in execution order, which is a topological order of
    the dataflow graph. Use as a context manager around the forward pass.
    """

    def __init__(self):
        self._entries: list[tuple[Tensor, tuple[Tensor, ...], object]] = []
        self._outer = None

    def __enter__(self) -> "Tape":
        self._outer = _active_tape()
        _STATE.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _STATE.tape = self._outer
        self._outer = None
        return False

    def __len__(self) -> int:
        return len(self._entries)


class no_grad:
    """Context manager that suspends tape recording."""

    def __enter__(self):
        self._outer = _active_tape()
        _STATE.tape = None
        return self

    def __exit__(self, exc_type, exc, tb):
        _STATE.tape = self._outer
        return False


def _record(out: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.tape = tape
        tape._entries.append((out, inputs, backward_fn))
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into ``grad`` of every recorded tensor.

    ``loss`` must be a size-1 tensor recorded on a tape. Calling twice
    without resetting gradients adds a second full contribution.
    """
    if loss.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss.tape is None:
        raise ContractError("loss was not recorded on an active tape")
    tape = loss.tape
    adjoint: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, inputs, fn in reversed(tape._entries):
        out_grad = adjoint.get(id(out))
        if out_grad is None:
            continue
        input_grads = fn(out_grad)
        for tensor, grad in zip(inputs, input_grads):
            if grad is None or not tensor.requires_grad:
                continue
            have = adjoint.get(id(tensor))
            adjoint[id(tensor)] = grad if have is None else have + grad
    written: set[int] = set()
    for out, inputs, _ in tape._entries:
        for tensor in (out, *inputs):
            key = id(tensor)
            if key in written or not tensor.requires_grad:
                continue
            contribution = adjoint.get(key)
            if contribution is None:
                continue
            written.add(key)
            if tensor.grad is None:
                tensor.grad = contribution.copy()
            else:
                tensor.grad = tensor.grad + contribution


def _check_broadcast(a_shape: tuple, b_shape: tuple) -> None:
    # Numpy-style: align trailing axes; each pair must match or one be 1.
    for da, db in zip(reversed(a_shape), reversed(b_shape)):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"shapes {a_shape} and {b_shape} are not broadcastable")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a.shape, b.shape)
    out = Tensor._wrap(a.data + b.data)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, (a, b), grad_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a.shape, b.shape)
    out = Tensor._wrap(a.data - b.data)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record(out, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a.shape, b.shape)
    out = Tensor._wrap(a.data * b.data)

    def grad_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(out, (a, b), grad_fn)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)
    out = Tensor._wrap(out_data)

    def grad_fn(g):
        return (g * (1.0 - out_data * out_data),)

    return _record(out, (a,), grad_fn)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out_data = np.empty_like(x)
    pos = x >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_data[~pos] = ex / (1.0 + ex)
    out = Tensor._wrap(out_data)

    def grad_fn(g):
        return (g * out_data * (1.0 - out_data),)

    return _record(out, (a,), grad_fn)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    out = Tensor._wrap(out_data)

    def grad_fn(g):
        return (g * out_data,)

    return _record(out, (a,), grad_fn)


def log(a: Tensor) -> Tensor:
    bad = np.flatnonzero(a.data <= 0.0)
    if bad.size:
        index = int(bad[0])
        raise DomainError(
            f"log of non-positive value {a.data.reshape(-1)[index]} at flat index {index}",
            index=index,
        )
    out = Tensor._wrap(np.log(a.data))

    def grad_fn(g):
        return (g / a.data,)

    return _record(out, (a,), grad_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul requires [m x k] by [k x n], got {a.shape} by {b.shape}")
    out = Tensor._wrap(a.data @ b.data)

    def grad_fn(g):
        return g @ b.data.T, a.data.T @ g

    return _record(out, (a, b), grad_fn)


def _normalize_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"axis {axis} invalid for {ndim}-dimensional tensor")
    return axis % ndim


def softmax(a: Tensor, axis: int) -> Tensor:
    axis = _normalize_axis(axis, a.ndim)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)
    out = Tensor._wrap(out_data)

    def grad_fn(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        return (out_data * (g - inner),)

    return _record(out, (a,), grad_fn)


def log_softmax(a: Tensor, axis: int) -> Tensor:
    axis = _normalize_axis(axis, a.ndim)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse
    out = Tensor._wrap(out_data)

    def grad_fn(g):
        return (g - np.exp(out_data) * g.sum(axis=axis, keepdims=True),)

    return _record(out, (a,), grad_fn)


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat requires at least one tensor")
    ndim = tensors[0].ndim
    axis = _normalize_axis(axis, ndim)
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            i != axis and d != tensors[0].shape[i] for i, d in enumerate(t.shape)
        ):
            raise ShapeError(
                f"concat along axis {axis} got incompatible shapes "
                f"{tensors[0].shape} and {t.shape}"
            )
    out = Tensor._wrap(np.concatenate([t.data for t in tensors], axis=axis))
    offsets = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def grad_fn(g):
        return np.split(g, offsets, axis=axis)

    return _record(out, tuple(tensors), grad_fn)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} to {tuple(shape)}")
    out = Tensor._wrap(a.data.reshape(shape).copy())

    def grad_fn(g):
        return (g.reshape(a.shape),)

    return _record(out, (a,), grad_fn)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    axis = _normalize_axis(axis, a.ndim)
    if start < 0 or length < 1 or start + length > a.shape[axis]:
        raise ShapeError(
            f"narrow [{start}:{start + length}] out of range for axis {axis} of {a.shape}"
        )
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out = Tensor._wrap(a.data[index].copy())

    def grad_fn(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _record(out, (a,), grad_fn)


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        out = Tensor._wrap(np.asarray(a.data.sum()))

        def grad_fn(g):
            return (np.broadcast_to(g, a.shape).copy(),)

        return _record(out, (a,), grad_fn)
    axis = _normalize_axis(axis, a.ndim)
    out = Tensor._wrap(a.data.sum(axis=axis))

    def grad_fn_axis(g):
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _record(out, (a,), grad_fn_axis)


def stop_gradient(a: Tensor) -> Tensor:
    """Value of ``a`` cut off from the tape."""
    return Tensor(a.data)
