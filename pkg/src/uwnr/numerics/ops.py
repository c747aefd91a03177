"""Differentiable elementwise, reduction and shape operations."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import ConfigError, ShapeError
from .tensor import Tensor, as_tensor, record


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from None


# -- binary arithmetic ------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return record(a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return record(a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting (covers broadcast multiply)."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return record(a.data * b.data, (a, b),
                  lambda g: (_unbroadcast(g * b.data, a.shape),
                             _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return record(a.data / b.data, (a, b),
                  lambda g: (_unbroadcast(g / b.data, a.shape),
                             _unbroadcast(-g * a.data / b.data ** 2, b.shape)))


def neg(x) -> Tensor:
    x = as_tensor(x)
    return record(-x.data, (x,), lambda g: (-g,))


def scale(x, k: float) -> Tensor:
    x = as_tensor(x)
    k = float(k)
    return record(x.data * k, (x,), lambda g: (g * k,))


def square(x) -> Tensor:
    x = as_tensor(x)
    return record(x.data * x.data, (x,), lambda g: (2.0 * x.data * g,))


# -- unary nonlinearities ---------------------------------------------------

def abs(x) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    return record(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return record(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # Split by sign so exp never overflows.
    d = x.data
    e = np.exp(-np.abs(d))
    s = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return record(s, (x,), lambda g: (g * s * (1.0 - s),))


def log(x) -> Tensor:
    x = as_tensor(x)
    return record(np.log(x.data), (x,), lambda g: (g / x.data,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return record(y, (x,), lambda g: (g * y,))


# -- reductions -------------------------------------------------------------

def _norm_axes(axis, ndim) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return record(out, (x,), vjp)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return scale(sum(x, axis=axes, keepdims=keepdims), 1.0 / count)


def _extreme(x: Tensor, axis: int, keepdims: bool, pick) -> Tensor:
    axis = axis % x.ndim
    idx = np.expand_dims(pick(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, idx, axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        gx = np.zeros(x.shape)
        np.put_along_axis(gx, idx, g, axis=axis)
        return (gx,)

    return record(out, (x,), vjp)


def amax(x, axis: int, keepdims: bool = False) -> Tensor:
    """Max along one axis; the gradient goes to the first maximiser."""
    return _extreme(as_tensor(x), axis, keepdims, np.argmax)


def amin(x, axis: int, keepdims: bool = False) -> Tensor:
    """Min along one axis (e.g. channel-wise min for the dark channel)."""
    return _extreme(as_tensor(x), axis, keepdims, np.argmin)


# -- shape manipulation -----------------------------------------------------

def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    return record(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def getitem(x, index) -> Tensor:
    x = as_tensor(x)

    def vjp(g):
        gx = np.zeros(x.shape)
        np.add.at(gx, index, g)
        return (gx,)

    return record(x.data[index], (x,), vjp)


def concat(tensors: Sequence, axis: int = 1) -> Tensor:
    """Concatenate along ``axis`` (channel axis by default)."""
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ConfigError("concat needs at least one tensor")
    ref = ts[0].shape
    axis = axis % len(ref)
    for t in ts[1:]:
        if t.ndim != len(ref) or any(
            t.shape[i] != ref[i] for i in range(len(ref)) if i != axis
        ):
            raise ShapeError(f"concat: {t.shape} incompatible with {ref} on axis {axis}")
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in ts], axis=axis)
    return record(out, ts, lambda g: tuple(np.split(g, splits, axis=axis)))


def upsample_nearest2x(x) -> Tensor:
    """Nearest-neighbour 2x upsampling of an N,C,H,W tensor."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"upsample expects N,C,H,W, got {x.shape}")
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def vjp(g):
        n, c, h, w = x.shape
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return record(out, (x,), vjp)


def global_avg_pool(x) -> Tensor:
    """N,C,H,W -> N,C,1,1 spatial mean."""
    return mean(x, axis=(2, 3), keepdims=True)
