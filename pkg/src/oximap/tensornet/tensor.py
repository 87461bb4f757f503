"""Reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray plus an optional gradient buffer. Operations
build a DAG of backward closures; ``backward()`` on a scalar walks the
graph in reverse topological order and accumulates gradients into every
reachable leaf with ``requires_grad=True``.

Heavy layer ops (convolutions, batch norm, ...) live in ``ops``; this
module provides the engine plus the elementwise/reduction primitives the
loss functions are composed from. All computation is plain numpy with a
fixed reduction order, so forward passes are deterministic.
"""

from __future__ import annotations

import contextlib

import numpy as np

from ..errors import ShapeError

_GRAD_ENABLED = True
_NAN_CHECK = False


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (eval-mode forwards)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def set_nan_check(enabled: bool) -> None:
    """When on, every op output is checked for NaN/Inf (debug mode)."""
    global _NAN_CHECK
    _NAN_CHECK = bool(enabled)


def _as_float_array(data) -> np.ndarray:
    arr = np.asarray(data)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """Dense n-dimensional array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_float_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    # -- graph machinery -----------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Backpropagate from this tensor (scalar unless grad is given)."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without an explicit gradient requires a scalar tensor")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise ShapeError(f"gradient shape {grad.shape} != tensor shape {self.data.shape}")

        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

        _accumulate(self, grad)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, mul(other, -1.0))
        return add(self, -other if isinstance(other, (int, float)) else -np.asarray(other))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_constant_like(other, self), self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, *shape)


def _constant_like(value, ref: Tensor) -> Tensor:
    t = Tensor(np.asarray(value, dtype=ref.dtype))
    return t


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    g = np.asarray(g, dtype=t.data.dtype)
    if t.grad is None:
        t.grad = g.copy() if g.base is not None or g is t.data else g
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def make_op(data: np.ndarray, parents: tuple, backward) -> Tensor:
    """Create a graph node. ``backward(grad)`` pushes into the parents."""
    if _NAN_CHECK and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite values produced by an op (NaN-check mode)")
    requires = _GRAD_ENABLED and any(isinstance(p, Tensor) and p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=requires)
    if requires:
        out._parents = tuple(p for p in parents if isinstance(p, Tensor))
        out._backward = backward
    return out


def _coerce(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _operand(x):
    """Raw value for arithmetic; python scalars stay weak so they never
    promote a float32 graph to float64."""
    if isinstance(x, Tensor):
        return x.data
    if isinstance(x, (int, float)) and not isinstance(x, bool):
        return x
    return np.asarray(x)


# -- primitives ---------------------------------------------------------------


def add(a, b) -> Tensor:
    ad, bd = _operand(a), _operand(b)
    out_data = ad + bd

    def backward(grad):
        if isinstance(a, Tensor):
            _accumulate(a, _unbroadcast(grad, ad.shape))
        if isinstance(b, Tensor):
            _accumulate(b, _unbroadcast(grad, bd.shape))

    return make_op(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    ad, bd = _operand(a), _operand(b)
    out_data = ad * bd

    def backward(grad):
        if isinstance(a, Tensor):
            _accumulate(a, _unbroadcast(grad * bd, ad.shape))
        if isinstance(b, Tensor):
            _accumulate(b, _unbroadcast(grad * ad, bd.shape))

    return make_op(out_data, (a, b), backward)


def div(a, b) -> Tensor:
    ad, bd = _operand(a), _operand(b)
    out_data = ad / bd

    def backward(grad):
        if isinstance(a, Tensor):
            _accumulate(a, _unbroadcast(grad / bd, ad.shape))
        if isinstance(b, Tensor):
            _accumulate(b, _unbroadcast(-grad * ad / (bd * bd), bd.shape))

    return make_op(out_data, (a, b), backward)


def power(a, exponent: float) -> Tensor:
    if isinstance(exponent, Tensor):
        raise ShapeError("power() supports scalar exponents only")
    ad = _coerce(a)
    out_data = ad ** exponent

    def backward(grad):
        if isinstance(a, Tensor):
            _accumulate(a, grad * exponent * ad ** (exponent - 1))

    return make_op(out_data, (a,), backward)


def sqrt(a) -> Tensor:
    ad = _coerce(a)
    out_data = np.sqrt(ad)

    def backward(grad):
        if isinstance(a, Tensor):
            _accumulate(a, grad * 0.5 / out_data)

    return make_op(out_data, (a,), backward)


def exp(a) -> Tensor:
    ad = _coerce(a)
    out_data = np.exp(ad)

    def backward(grad):
        if isinstance(a, Tensor):
            _accumulate(a, grad * out_data)

    return make_op(out_data, (a,), backward)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    ad = _coerce(a)
    out_data = ad.sum(axis=axis, keepdims=keepdims)

    def backward(grad):
        if not isinstance(a, Tensor):
            return
        g = grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, ad.shape))

    return make_op(out_data, (a,), backward)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    ad = _coerce(a)
    if axis is None:
        count = ad.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = 1
        for ax in axes:
            count *= ad.shape[ax]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, *shape) -> Tensor:
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    ad = _coerce(a)
    out_data = ad.reshape(shape)

    def backward(grad):
        if isinstance(a, Tensor):
            _accumulate(a, grad.reshape(ad.shape))

    return make_op(out_data, (a,), backward)


def concat(tensors, axis: int = 1) -> Tensor:
    datas = [_coerce(t) for t in tensors]
    out_data = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def backward(grad):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if isinstance(t, Tensor):
                index = [slice(None)] * grad.ndim
                index[axis] = slice(lo, hi)
                _accumulate(t, grad[tuple(index)])

    return make_op(out_data, tuple(tensors), backward)
