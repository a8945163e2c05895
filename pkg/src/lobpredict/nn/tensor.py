"""Minimal reverse-mode automatic differentiation on numpy arrays.

Every op records its parents and a closure that maps the output gradient to
parent gradients.  :meth:`Tensor.backward` walks the graph in reverse
topological order.  Arrays keep whatever float dtype they were created with,
so the same graph runs in float32 for training and float64 for gradient
checks.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, parents: tuple = (), backward_fn: Callable | None = None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad: np.ndarray | None = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"

    def numpy(self) -> np.ndarray:
        return self.data

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                stack.append((p, False))
        self.grad = grad
        for node in reversed(order):
            g = node.grad
            if node.backward_fn is None or g is None:
                continue
            for p, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not p.requires_grad:
                    continue
                p.grad = pg if p.grad is None else p.grad + pg
            if node.parents:
                node.grad = None  # free intermediate gradients

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(as_tensor(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return Tensor(out, parents=(a, b), backward_fn=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a: Tensor) -> Tensor:
    return Tensor(-a.data, parents=(a,), backward_fn=lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.data * b.data,
        parents=(a, b),
        backward_fn=lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor(out, parents=(a,), backward_fn=lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return Tensor(np.log(a.data), parents=(a,), backward_fn=lambda g: (g / a.data,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return Tensor(out, parents=(a,), backward_fn=lambda g: (g * out * (1 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return Tensor(out, parents=(a,), backward_fn=lambda g: (g * (1 - out * out),))


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    scale = np.where(a.data > 0, 1.0, slope).astype(a.dtype)
    return Tensor(a.data * scale, parents=(a,), backward_fn=lambda g: (g * scale,))


def scale_by(a: Tensor, mask: np.ndarray) -> Tensor:
    """Multiply by a constant array (dropout masks)."""
    return Tensor(a.data * mask, parents=(a,), backward_fn=lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor(out, parents=(a,), backward_fn=back)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis, keepdims), np.asarray(1.0 / n, dtype=a.dtype))


def reshape(a: Tensor, shape) -> Tensor:
    return Tensor(a.data.reshape(shape), parents=(a,), backward_fn=lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return Tensor(a.data.transpose(axes), parents=(a,), backward_fn=lambda g: (g.transpose(inv),))


def concat(ts: Sequence[Tensor], axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in ts]
    out = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def back(g):
        idx = [slice(None)] * g.ndim
        grads = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(lo, hi)
            grads.append(g[tuple(idx)])
        return tuple(grads)

    return Tensor(out, parents=tuple(ts), backward_fn=back)


def getitem(a: Tensor, idx) -> Tensor:
    out = a.data[idx]

    def back(g):
        full = np.zeros_like(a.data)
        if _advanced(idx):
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        return (full,)

    return Tensor(out, parents=(a,), backward_fn=back)


def _advanced(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w (+ b)`` contracting the last axis of ``x``."""
    xd, wd = x.data, w.data
    out = xd @ wd
    if b is not None:
        out = out + b.data

    def back(g):
        gx = g @ wd.T
        gw = xd.reshape(-1, xd.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        if b is None:
            return gx, gw
        return gx, gw, g.reshape(-1, g.shape[-1]).sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return Tensor(out, parents=parents, backward_fn=back)


# ---------------------------------------------------------------------------
# convolution / pooling / normalisation
# ---------------------------------------------------------------------------


def conv_output_size(size: int, kernel: int, stride: int, pad: tuple[int, int] = (0, 0)) -> int:
    span = size + pad[0] + pad[1] - kernel
    if span < 0:
        raise ValueError(f"kernel {kernel} larger than padded input {size + sum(pad)}")
    if span % stride:
        raise ValueError(f"stride {stride} does not divide extent {span} (input {size}, kernel {kernel})")
    return span // stride + 1


def same_padding(kernel: int) -> tuple[int, int]:
    total = kernel - 1
    return total // 2, total - total // 2


def conv(x: Tensor, w: Tensor, b: Tensor | None = None, stride: Sequence[int] | None = None,
         padding: Sequence[tuple[int, int]] | None = None) -> Tensor:
    """N-d cross-correlation, channels last.

    ``x`` is ``(N, *spatial, Cin)``, ``w`` is ``(*kernel, Cin, Cout)``; the
    result is ``(N, *out_spatial, Cout)`` with out sizes ``(S - K) / s + 1``.
    """
    nd = w.ndim - 2
    if x.ndim != nd + 2:
        raise ValueError(f"input rank {x.ndim} does not match a {nd}-d kernel")
    kernel = w.shape[:nd]
    stride = tuple(stride) if stride is not None else (1,) * nd
    padding = tuple(padding) if padding is not None else ((0, 0),) * nd
    if x.shape[-1] != w.shape[-2]:
        raise ValueError(f"input has {x.shape[-1]} channels, kernel expects {w.shape[-2]}")
    xd = x.data
    if any(p != (0, 0) for p in padding):
        xd = np.pad(xd, ((0, 0),) + tuple(padding) + ((0, 0),))
    out_sp = tuple(conv_output_size(x.shape[1 + i], kernel[i], stride[i], padding[i]) for i in range(nd))
    wd = w.data
    cout = wd.shape[-1]
    out = np.zeros((xd.shape[0],) + out_sp + (cout,), dtype=np.result_type(xd, wd))
    offsets = list(np.ndindex(*kernel))
    slices = []
    for off in offsets:
        sl = (slice(None),) + tuple(
            slice(off[i], off[i] + stride[i] * (out_sp[i] - 1) + 1, stride[i]) for i in range(nd)
        )
        slices.append(sl)
        out += xd[sl] @ wd[off]
    if b is not None:
        out += b.data

    def back(g):
        gx = np.zeros_like(xd)
        gw = np.zeros_like(wd)
        g2 = g.reshape(-1, cout)
        for off, sl in zip(offsets, slices):
            gx[sl] += g @ wd[off].T
            gw[off] = xd[sl].reshape(-1, xd.shape[-1]).T @ g2
        if any(p != (0, 0) for p in padding):
            crop = (slice(None),) + tuple(slice(p[0], p[0] + x.shape[1 + i]) for i, p in enumerate(padding))
            gx = gx[crop]
        grads = (gx, gw)
        if b is not None:
            grads += (g2.sum(axis=0),)
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return Tensor(out, parents=parents, backward_fn=back)


def maxpool_time(x: Tensor, size: int = 3) -> Tensor:
    """Stride-1 max pooling along axis 1 with "same" padding (pads with -inf)."""
    lo, hi = same_padding(size)
    pad = [(0, 0)] * x.ndim
    pad[1] = (lo, hi)
    xp = np.pad(x.data, pad, constant_values=-np.inf)
    T = x.shape[1]
    views = np.stack([xp[:, k : k + T] for k in range(size)])
    arg = views.argmax(axis=0)
    out = np.take_along_axis(views, arg[None], axis=0)[0]

    def back(g):
        gp = np.zeros(xp.shape, dtype=g.dtype)
        for k in range(size):
            gp[:, k : k + T] += np.where(arg == k, g, 0)
        return (gp[:, lo : lo + T],)

    return Tensor(out, parents=(x,), backward_fn=back)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, mean_: np.ndarray | None = None,
               var: np.ndarray | None = None, eps: float = 1e-3) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Normalise over every axis but the last.

    With ``mean_``/``var`` given (inference) those statistics are used and
    treated as constants; otherwise batch statistics are used.  Returns the
    output and the statistics used.
    """
    xd = x.data
    axes = tuple(range(xd.ndim - 1))
    training = mean_ is None
    if training:
        mean_ = xd.mean(axis=axes)
        var = xd.var(axis=axes)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mean_) * inv
    out = xhat * gamma.data + beta.data
    m = xd.size // xd.shape[-1]

    def back(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gxhat = g * gamma.data
        if training:
            gx = inv / m * (m * gxhat - gxhat.sum(axis=axes) - xhat * (gxhat * xhat).sum(axis=axes))
        else:
            gx = gxhat * inv
        return gx.astype(xd.dtype, copy=False), gg, gb

    return Tensor(out.astype(xd.dtype, copy=False), parents=(x, gamma, beta), backward_fn=back), mean_, var


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    shifted = xd - xd.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    sm = np.exp(out)

    def back(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return Tensor(out, parents=(x,), backward_fn=back)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return exp(log_softmax(x, axis))
