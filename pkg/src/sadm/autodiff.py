"""Dense float64 tensors with tape-based reverse-mode differentiation.

Usage::

    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    with Tape() as tape:
        y = (x * x).sum()
    grads = tape.backward(y)
    grads[x]  # array([2., 4., 6.])

Operations only record onto the active tape when at least one input is
tracked (``requires_grad`` or itself produced on the tape). A tensor with
``requires_grad=False`` never receives an accumulated gradient, but gradients
still flow through the operations it takes part in; this is how a frozen
encoder passes gradients back to the denoiser.

Storage and kernels are numpy. Elementwise ops are exact IEEE-754 results;
reductions use numpy's row-major pairwise summation and matmul uses the
linked BLAS, both deterministic for a fixed build and thread count.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor", "Tape", "Gradients", "ShapeError", "NonFiniteError", "TapeError",
    "as_tensor", "backward", "grad_check", "no_grad",
    "add", "sub", "mul", "div", "scale", "neg", "matmul", "transpose",
    "sum", "mean", "squared_l2", "row_inner", "silu", "tanh", "sqrt", "abs",
    "square", "concat", "pairwise_diff", "reshape",
]


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class TapeError(RuntimeError):
    pass


_state = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


@contextmanager
def no_grad():
    """Suspend recording: ops inside run as plain array arithmetic."""
    if not hasattr(_state, "stack"):
        _state.stack = []
    _state.stack.append(None)
    try:
        yield
    finally:
        _state.stack.pop()


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Append-only record of differentiable operations for one step."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._spent = False

    def __enter__(self) -> "Tape":
        if not hasattr(_state, "stack"):
            _state.stack = []
        _state.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.stack.pop()

    def _record(self, out: "Tensor", inputs: tuple, backward: Callable) -> None:
        if self._spent:
            raise TapeError("cannot record onto a tape after backward()")
        out._tape = self
        self.nodes.append(_Node(out, inputs, backward))

    def backward(self, root: "Tensor") -> "Gradients":
        if self._spent:
            raise TapeError("backward() already called on this tape")
        if root.data.size != 1:
            raise TapeError(f"backward() needs a scalar root, got shape {root.shape}")
        self._spent = True
        grads: dict[int, tuple[Tensor, np.ndarray]] = {}
        if root._tape is self:
            grads[id(root)] = (root, np.ones_like(root.data))
        for node in reversed(self.nodes):
            entry = grads.get(id(node.out))
            if entry is None:
                continue
            for inp, g in zip(node.inputs, node.backward(entry[1])):
                if g is None or not inp.tracked:
                    continue
                prev = grads.get(id(inp))
                grads[id(inp)] = (inp, g if prev is None else prev[1] + g)
        self.nodes = []
        return Gradients(grads)


class Gradients:
    """Map from tensor to its gradient array.

    Trainable tensors unreachable from the root read as zeros; frozen
    tensors (``requires_grad=False``) are absent.
    """

    def __init__(self, entries: dict[int, tuple["Tensor", np.ndarray]]):
        self._entries = entries

    def __contains__(self, t: "Tensor") -> bool:
        return id(t) in self._entries and self._entries[id(t)][0] is t and t.requires_grad

    def __getitem__(self, t: "Tensor") -> np.ndarray:
        if t in self:
            return self._entries[id(t)][1]
        if t.requires_grad:
            return np.zeros_like(t.data)
        raise KeyError("tensor does not require grad; no gradient accumulated")

    def get(self, t: "Tensor", default=None):
        return self._entries[id(t)][1] if id(t) in self._entries else default


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "_tape", "__weakref__")

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64, copy=True, order="C")
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite values in tensor{' ' + name if name else ''}")
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def tracked(self) -> bool:
        return self.requires_grad or self._tape is not None

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self.shape)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def sum(self, axis: int | None = None) -> "Tensor":
        return sum(self, axis)

    def mean(self, axis: int | None = None) -> "Tensor":
        return mean(self, axis)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(other, self)

    def __truediv__(self, other):
        if np.isscalar(other):
            return scale(self, 1.0 / other)
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


def _raise_item(shape):
    raise ShapeError(f"item() needs a single-element tensor, got shape {shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(value: np.ndarray, inputs: tuple[Tensor, ...], backward: Callable, op: str) -> Tensor:
    if not np.isfinite(value).all():
        raise NonFiniteError(f"{op} produced a non-finite result")
    out = Tensor.__new__(Tensor)
    out.data = value
    out.requires_grad = False
    out.name = None
    out._tape = None
    tape = _active_tape()
    if tape is not None and any(t.tracked for t in inputs):
        tape._record(out, inputs, backward)
    return out


def _check_broadcast(a: tuple, b: tuple, op: str) -> None:
    if a == b or a == () or b == ():
        return
    small, big = (a, b) if len(a) < len(b) else (b, a)
    if len(small) < len(big) and big[len(big) - len(small):] == small:
        return
    raise ShapeError(f"{op}: incompatible shapes {a} and {b} (broadcast only over leading axes)")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead))) if lead else g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape
    return _emit(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape
    return _emit(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data
    return _emit(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "div")
    ad, bd = a.data, b.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ad / bd

    def back(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return _emit(out, (a, b), back, "div")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _emit(a.data * c, (a,), lambda g: (g * c,), "scale")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _emit(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _emit(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got shape {a.shape}")
    return _emit(np.ascontiguousarray(a.data.T), (a,), lambda g: (g.T,), "transpose")


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {old} as {tuple(shape)}") from exc
    return _emit(out, (a,), lambda g: (g.reshape(old),), "reshape")


def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape
    if axis is None:
        return _emit(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")
    ax = axis % a.ndim
    return _emit(a.data.sum(axis=ax), (a,),
                 lambda g: (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),), "sum")


def mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    return scale(sum(a, axis), 1.0 / n)


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _emit(ad * ad, (a,), lambda g: (2.0 * g * ad,), "square")


def squared_l2(a) -> Tensor:
    """Sum of squares of every entry."""
    return sum(square(a))


def row_inner(a, b) -> Tensor:
    """``out[i] = <a[i], b[i]>`` for two matrices of equal shape."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or a.shape != b.shape:
        raise ShapeError(f"row_inner: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _emit((ad * bd).sum(axis=1), (a, b),
                 lambda g: (g[:, None] * bd, g[:, None] * ad), "row_inner")


def silu(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    out = x * sig
    return _emit(out, (a,), lambda g: (g * (sig + out * (1.0 - sig)),), "silu")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _emit(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sqrt(a) -> Tensor:
    """Square root with the zero subgradient at 0."""
    a = as_tensor(a)
    if (a.data < 0).any():
        raise NonFiniteError("sqrt of a negative value")
    out = np.sqrt(a.data)

    def back(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(out > 0, 0.5 / out, 0.0)
        return (g * d,)

    return _emit(out, (a,), back, "sqrt")


def abs(a) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    sgn = np.sign(a.data)
    return _emit(np.abs(a.data), (a,), lambda g: (g * sgn,), "abs")


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    if not ts:
        raise ShapeError("concat of an empty sequence")
    nd = ts[0].ndim
    ax = axis % nd
    for t in ts[1:]:
        if t.ndim != nd or t.shape[:ax] + t.shape[ax + 1:] != ts[0].shape[:ax] + ts[0].shape[ax + 1:]:
            raise ShapeError(f"concat: incompatible shapes {ts[0].shape} and {t.shape}")
    cuts = np.cumsum([t.shape[ax] for t in ts])[:-1]
    return _emit(np.concatenate([t.data for t in ts], axis=ax), ts,
                 lambda g: tuple(np.split(g, cuts, axis=ax)), "concat")


def pairwise_diff(a) -> Tensor:
    """``out[i, j] = a[i] - a[j]`` for a matrix ``a`` of shape (n, d)."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"pairwise_diff needs a matrix, got shape {a.shape}")
    ad = a.data
    return _emit(ad[:, None, :] - ad[None, :, :], (a,),
                 lambda g: (g.sum(axis=1) - g.sum(axis=0),), "pairwise_diff")


def backward(root: Tensor) -> Gradients:
    """Backpropagate from ``root`` on the tape that produced it."""
    if root._tape is None:
        if root.data.size != 1:
            raise TapeError(f"backward() needs a scalar root, got shape {root.shape}")
        return Gradients({})
    return root._tape.backward(root)


def grad_check(f: Callable[..., Tensor], params, eps: float = 1e-6) -> float:
    """Max relative error between taped and central-difference gradients.

    ``f(*params)`` must return a scalar tensor and be deterministic. Each
    coordinate's error is ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    params = [params] if isinstance(params, Tensor) else list(params)
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = True
    try:
        with Tape() as tape:
            out = f(*params)
        grads = backward(out)
        worst = 0.0
        for p in params:
            analytic = grads[p].reshape(-1)
            flat = p.data.reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + eps
                fp = _scalar(f(*params))
                flat[k] = orig - eps
                fm = _scalar(f(*params))
                flat[k] = orig
                numeric = (fp - fm) / (2.0 * eps)
                if not np.isfinite(numeric):
                    raise NonFiniteError(f"non-finite objective near coordinate {k}")
                err = np.abs(analytic[k] - numeric) / max(1.0, np.abs(analytic[k]))
                worst = max(worst, float(err))
        del tape
        return worst
    finally:
        for p, flag in zip(params, flags):
            p.requires_grad = flag


def _scalar(t: Tensor) -> float:
    v = float(as_tensor(t).data.reshape(-1)[0])
    if not np.isfinite(v):
        raise NonFiniteError("objective is non-finite at a perturbed point")
    return v
