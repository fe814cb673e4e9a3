"""Differentiable operations over :class:`Tensor`.

Elementwise binary ops follow numpy broadcasting; their backward passes sum
gradients back down to each input's shape. Every op checks its output for
NaN/Inf before returning.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tape import ShapeError, Tensor, _check_finite, as_tensor


def _emit(op, inputs, data, backward, key=None) -> Tensor:
    _check_finite(data, op)
    tape = None
    for t in inputs:
        if t.node is not None:
            if tape is None:
                tape = t.tape
            elif t.tape is not tape:
                raise ValueError(f"{op}: inputs recorded on different tapes")
    if tape is None:
        return Tensor(data)
    return tape.record(op, inputs, data, backward, key)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise binary -------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _emit("add", (a, b), a.data + b.data,
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _emit("sub", (a, b), a.data - b.data,
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _emit("mul", (a, b), ad * bd,
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return _emit("div", (a, b), out, bw)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _emit("scale", (a,), a.data * c, lambda g: (g * c,))


def square_diff(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("square_diff", a, b)
    diff = a.data - b.data
    sa, sb = a.shape, b.shape

    def bw(g):
        gd = 2.0 * g * diff
        return _unbroadcast(gd, sa), _unbroadcast(-gd, sb)

    return _emit("square_diff", (a, b), diff * diff, bw)


def maximum(a, floor: float) -> Tensor:
    """Elementwise max against a constant; gradient is zero where clamped."""
    a = as_tensor(a)
    keep = a.data >= floor
    return _emit("maximum", (a,), np.where(keep, a.data, floor), lambda g: (g * keep,),
                 key=np.packbits(keep).tobytes())


# -- linear algebra / structure -----------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _emit("matmul", (a, b), ad @ bd, lambda g: (g @ bd.T, ad.T @ g))


def bias_add(x, bias) -> Tensor:
    x, bias = as_tensor(x), as_tensor(bias)
    if bias.data.ndim != 1 or x.data.ndim != 2 or x.shape[1] != bias.shape[0]:
        raise ShapeError(f"bias_add: cannot add bias {bias.shape} to {x.shape}")
    return _emit("bias_add", (x, bias), x.data + bias.data, lambda g: (g, g.sum(axis=0)))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    ax = axis % data.ndim
    bounds = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def bw(g):
        return np.split(g, bounds, axis=ax)

    return _emit("concat", tuple(ts), data, bw)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        data = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: {exc}") from None
    return _emit("reshape", (x,), data, lambda g: (g.reshape(old),))


def broadcast_rows(x, n: int) -> Tensor:
    """Tile a vector of shape (D,) into an (n, D) matrix."""
    x = as_tensor(x)
    if x.data.ndim != 1:
        raise ShapeError(f"broadcast_rows expects a vector, got {x.shape}")
    data = np.broadcast_to(x.data, (n, x.shape[0])).copy()
    return _emit("broadcast_rows", (x,), data, lambda g: (g.sum(axis=0),))


def gather_rows(x, index) -> Tensor:
    """``x[index]`` along axis 0; ``index`` may have any shape."""
    x = as_tensor(x)
    idx = np.asarray(index, dtype=np.intp)
    n = x.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"gather_rows: index out of range for {n} rows")
    data = x.data[idx]
    flat = idx.ravel()
    tail = x.shape[1:]

    def bw(g):
        g2 = g.reshape(flat.size, -1)
        out = np.empty((n, g2.shape[1]))
        for c in range(g2.shape[1]):
            out[:, c] = np.bincount(flat, weights=g2[:, c], minlength=n)
        return (out.reshape((n,) + tail),)

    return _emit("gather_rows", (x,), data, bw, key=flat.astype(np.int64).tobytes())


# -- elementwise unary --------------------------------------------------------

def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _emit("relu", (x,), x.data * mask, lambda g: (g * mask,),
                 key=np.packbits(mask).tobytes())


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # split by sign so exp never overflows
    z = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return _emit("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return _emit("exp", (x,), out, lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(xd)
    return _emit("log", (x,), out, lambda g: (g / xd,))


def absolute(x) -> Tensor:
    """|x| with subgradient 0 at exactly zero."""
    x = as_tensor(x)
    sign = np.sign(x.data)
    return _emit("abs", (x,), np.abs(x.data), lambda g: (g * sign,),
                 key=sign.astype(np.int8).tobytes())


# -- reductions ---------------------------------------------------------------

def norm(x, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``; gradient is zero where the norm is zero."""
    x = as_tensor(x)
    xd = x.data
    out = np.sqrt(np.sum(xd * xd, axis=axis))
    ax = axis % xd.ndim

    def bw(g):
        safe = np.where(out > 0, out, 1.0)
        coef = np.where(out > 0, g / safe, 0.0)
        return (np.expand_dims(coef, ax) * xd,)

    return _emit("norm", (x,), out, bw)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.shape
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit("sum", (x,), np.asarray(out, dtype=np.float64), bw)


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else x.shape[axis]
    if count == 0:
        raise ShapeError("mean of an empty tensor")
    return scale(sum(x, axis=axis), 1.0 / count)


def max_rows(x) -> Tensor:
    """Column-wise max over the rows of a matrix (pooling over points).

    The gradient goes to the first maximal row of each column.
    """
    x = as_tensor(x)
    if x.data.ndim != 2 or x.shape[0] == 0:
        raise ShapeError(f"max_rows expects a non-empty matrix, got {x.shape}")
    arg = np.argmax(x.data, axis=0)
    cols = np.arange(x.shape[1])
    out = x.data[arg, cols]
    n = x.shape[0]

    def bw(g):
        gx = np.zeros((n, len(cols)))
        gx[arg, cols] = g
        return (gx,)

    return _emit("max_rows", (x,), out, bw, key=arg.astype(np.int64).tobytes())


def softmax(x, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``."""
    x = as_tensor(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _emit("softmax", (x,), out, bw)


def select(x, mask) -> Tensor:
    """Zero out entries where ``mask`` is false (mask treated as a constant)."""
    x = as_tensor(x)
    keep = np.asarray(mask, dtype=bool)
    keep = np.broadcast_to(keep, x.shape)
    return _emit("select", (x,), np.where(keep, x.data, 0.0), lambda g: (g * keep,),
                 key=np.packbits(keep).tobytes())
