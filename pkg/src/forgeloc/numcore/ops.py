"""Differentiable primitives.

Every primitive computes its forward value with numpy, validates that the
result is finite, and (when a tape is active and some input requires a
gradient) records a closure that maps the output gradient to input gradients.
Broadcasting is supported only where the network needs it: adding or
multiplying a trailing-shape tensor (bias, gain, positional table) onto a
batched one.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .tensor import Node, NumericalError, ShapeError, Tensor, active_tape

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


def _emit(kind: str, inputs: Sequence[Tensor], out: np.ndarray, backward) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise NumericalError(f"{kind}: non-finite output")
    needs = any(t.requires_grad for t in inputs)
    result = Tensor(out, requires_grad=needs)
    tape = active_tape()
    if needs and tape is not None:
        tape.record(Node(kind, inputs, result, backward))
    return result


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead > 0:
        grad = grad.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(kind: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"{kind}: cannot combine {a.shape} and {b.shape}") from exc


# -- elementwise -------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)
    out = a.data + b.data
    return _emit("add", (a, b), out,
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a, b)
    out = a.data - b.data
    return _emit("sub", (a, b), out,
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("mul", a, b)
    out = a.data * b.data
    return _emit("mul", (a, b), out,
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    return _emit("scale", (a,), a.data * c, lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _emit("relu", (x,), np.where(mask, x.data, 0).astype(x.data.dtype),
                 lambda g: (g * mask,))


def gelu(x: Tensor) -> Tensor:
    """Tanh approximation of GELU."""
    v = x.data
    c = v.dtype.type(SQRT_2_OVER_PI)
    v2 = v * v
    inner = c * (v + v.dtype.type(0.044715) * v2 * v)
    th = np.tanh(inner)
    out = 0.5 * v * (1 + th)

    def back(g):
        dinner = c * (1 + v.dtype.type(3 * 0.044715) * v2)
        return (g * (0.5 * (1 + th) + 0.5 * v * (1 - th ** 2) * dinner),)

    return _emit("gelu", (x,), out, back)


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise NumericalError("log: non-positive input")
    return _emit("log", (x,), np.log(x.data), lambda g: (g / x.data,))


# -- linear algebra ----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _emit("matmul", (a, b), out, back)


def conv1d(x: Tensor, w: Tensor) -> Tensor:
    """Same-padded temporal convolution.

    x: (..., T, Cin); w: (k, Cin, Cout) with odd k. Output (..., T, Cout).
    """
    if w.ndim != 3 or x.shape[-1] != w.shape[1] or w.shape[0] % 2 == 0:
        raise ShapeError(f"conv1d: input {x.shape} kernel {w.shape}")
    k, cin, cout = w.shape
    pad = k // 2
    T = x.shape[-2]
    widths = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (0, 0)]
    xp = np.pad(x.data, widths)
    cols = np.concatenate([xp[..., i:i + T, :] for i in range(k)], axis=-1)
    wmat = w.data.reshape(k * cin, cout)
    out = np.matmul(cols, wmat)

    def back(g):
        gcols = np.matmul(g, wmat.T)
        gxp = np.zeros_like(xp)
        for i in range(k):
            gxp[..., i:i + T, :] += gcols[..., i * cin:(i + 1) * cin]
        gx = gxp[..., pad:pad + T, :]
        gw = np.matmul(cols.reshape(-1, k * cin).T, g.reshape(-1, cout))
        return gx, gw.reshape(k, cin, cout)

    return _emit("conv1d", (x, w), out, back)


# -- normalisation and distributions -----------------------------------------

def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, without affine terms.

    A constant row normalises to zeros (``eps`` keeps the denominator away
    from zero).
    """
    v = x.data
    mu = v.mean(axis=-1, keepdims=True)
    xc = v - mu
    var = (xc ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + v.dtype.type(eps))
    xhat = xc * inv

    def back(g):
        n = v.shape[-1]
        gm = g.mean(axis=-1, keepdims=True)
        gx = g * xhat
        return (inv * (g - gm - xhat * gx.sum(axis=-1, keepdims=True) / n),)

    return _emit("layer_norm", (x,), xhat, back)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _emit("softmax", (x,), p, back)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def back(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _emit("log_softmax", (x,), out, back)


def attention(q: Tensor, k: Tensor, v: Tensor, n_heads: int,
              weights_out: list | None = None) -> Tensor:
    """Multi-head scaled dot-product attention.

    q: (B, Tq, D); k, v: (B, Tk, D). Heads split D evenly. If ``weights_out``
    is a list, the (B, H, Tq, Tk) attention weights are appended to it.
    """
    if q.ndim != 3 or k.shape != v.shape or q.shape[0] != k.shape[0] or q.shape[2] != k.shape[2]:
        raise ShapeError(f"attention: q {q.shape} k {k.shape} v {v.shape}")
    B, Tq, D = q.shape
    Tk = k.shape[1]
    if D % n_heads:
        raise ShapeError(f"attention: width {D} not divisible by {n_heads} heads")
    dh = D // n_heads
    s = q.data.dtype.type(1.0 / math.sqrt(dh))

    def split(a, T):
        return a.reshape(B, T, n_heads, dh).transpose(0, 2, 1, 3)

    qh, kh, vh = split(q.data, Tq), split(k.data, Tk), split(v.data, Tk)
    logits = np.matmul(qh, kh.transpose(0, 1, 3, 2)) * s
    logits -= logits.max(axis=-1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=-1, keepdims=True)
    oh = np.matmul(p, vh)
    out = oh.transpose(0, 2, 1, 3).reshape(B, Tq, D)
    if weights_out is not None:
        weights_out.append(p)

    def back(g):
        gh = g.reshape(B, Tq, n_heads, dh).transpose(0, 2, 1, 3)
        gv = np.matmul(p.transpose(0, 1, 3, 2), gh)
        gp = np.matmul(gh, vh.transpose(0, 1, 3, 2))
        gl = p * (gp - (gp * p).sum(axis=-1, keepdims=True)) * s
        gq = np.matmul(gl, kh)
        gk = np.matmul(gl.transpose(0, 1, 3, 2), qh)

        def merge(a, T):
            return a.transpose(0, 2, 1, 3).reshape(B, T, D)

        return merge(gq, Tq), merge(gk, Tk), merge(gv, Tk)

    return _emit("attention", (q, k, v), out, back)


# -- structural --------------------------------------------------------------

def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not parts:
        raise ShapeError("concat: no inputs")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[p.shape for p in parts]}") from exc
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _emit("concat", tuple(parts), out, back)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: {x.shape} -> {shape}") from exc
    return _emit("reshape", (x,), out, lambda g: (g.reshape(x.shape),))


def broadcast_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = np.broadcast_to(x.data, shape).copy()
    except ValueError as exc:
        raise ShapeError(f"broadcast_to: {x.shape} -> {shape}") from exc
    return _emit("broadcast_to", (x,), out, lambda g: (_unbroadcast(g, x.shape),))


def take(x: Tensor, index: np.ndarray, axis: int) -> Tensor:
    """Gather along ``axis`` with a per-batch index.

    ``index`` has the shape of x's leading dims up to and including ``axis``
    with the ``axis`` dimension replaced by the number of picks; trailing
    dims of x are carried along. For x (B, T, D) and index (B, n) with
    axis=1 this yields (B, n, D).
    """
    index = np.asarray(index, dtype=np.intp)
    axis = axis % x.ndim
    if index.ndim != axis + 1 or index.shape[:axis] != x.shape[:axis]:
        raise ShapeError(f"take: index {index.shape} for {x.shape} axis {axis}")
    if index.size and (index.min() < 0 or index.max() >= x.shape[axis]):
        raise ShapeError("take: index out of range")
    full = index.reshape(index.shape + (1,) * (x.ndim - axis - 1))
    out = np.take_along_axis(x.data, np.broadcast_to(full, index.shape + x.shape[axis + 1:]), axis=axis)

    def back(g):
        gx = np.zeros_like(x.data)
        lead = np.indices(index.shape, sparse=True)
        np.add.at(gx, tuple(lead[:axis]) + (index,), g)
        return (gx,)

    return _emit("take", (x,), out, back)


# -- reductions --------------------------------------------------------------

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _emit("sum", (x,), out, back)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def sq_l2(x: Tensor, axis: int = -1) -> Tensor:
    """Squared Euclidean norm along ``axis``."""
    out = (x.data ** 2).sum(axis=axis)
    return _emit("sq_l2", (x,), out,
                 lambda g: (2.0 * x.data * np.expand_dims(g, axis),))


def topk_mean(x: Tensor, k: int, axis: int = -2) -> Tensor:
    """Mean of the k largest entries along ``axis``, per remaining position.

    Selection is treated as constant for differentiation; ties go to the
    lower index.
    """
    n = x.shape[axis]
    if not 1 <= k <= n:
        raise ShapeError(f"topk_mean: k={k} with {n} entries")
    order = np.argsort(-x.data, axis=axis, kind="stable")
    idx = np.take(order, np.arange(k), axis=axis)
    picked = np.take_along_axis(x.data, idx, axis=axis)
    out = picked.mean(axis=axis)

    def back(g):
        gx = np.zeros_like(x.data)
        share = np.expand_dims(g, axis) / x.data.dtype.type(k)
        np.put_along_axis(gx, idx, np.broadcast_to(share, idx.shape), axis=axis)
        return (gx,)

    return _emit("topk_mean", (x,), out, back)


# -- composites --------------------------------------------------------------

def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add(y, b)
