"""A minimal reverse-mode autodiff tensor on top of numpy.

Only the operations the loss-predictor needs are provided: 3x3 strided
convolution, ReLU, global average pooling, dense layers, concatenation and the
mean-squared-error loss.
"""
from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_backward", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Backpropagate from this tensor (a scalar unless ``grad`` is given)."""
        order, seen = [], set()

        def visit(t):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            order.append(t)

        visit(self)
        self._accumulate(np.ones_like(self.data) if grad is None else grad)
        for t in reversed(order):
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _track(*parents):
    return any(p.requires_grad for p in parents)


def _wrap(x, like: Tensor | None = None):
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data + b.data, _track(a, b), (a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    out._backward = backward if out.requires_grad else None
    return out


def matmul(a, b) -> Tensor:
    """``(N, D) @ (D, O)``."""
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data @ b.data, _track(a, b), (a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    out._backward = backward if out.requires_grad else None
    return out


def linear(x, w, b) -> Tensor:
    return add(matmul(x, w), b)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0).astype(x.data.dtype), x.requires_grad, (x,))

    def backward(g):
        x._accumulate(g * mask)

    out._backward = backward if out.requires_grad else None
    return out


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), _track(*tensors), tuple(tensors))

    def backward(g):
        start = 0
        for t, n in zip(tensors, sizes):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(start, start + n)
                t._accumulate(g[tuple(idx)])
            start += n

    out._backward = backward if out.requires_grad else None
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """``(N, C, H, W) -> (N, C)``."""
    n, c, h, w = x.shape
    out = Tensor(x.data.mean(axis=(2, 3)), x.requires_grad, (x,))

    def backward(g):
        x._accumulate(np.broadcast_to(g[:, :, None, None] / (h * w), x.shape))

    out._backward = backward if out.requires_grad else None
    return out


def _conv_geometry(h, w, stride):
    return (h + 2 - 3) // stride + 1, (w + 2 - 3) // stride + 1


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 2) -> Tensor:
    """3x3 convolution with zero padding 1.  ``x`` (N, C, H, W), ``w`` (O, C, 3, 3), ``b`` (O,)."""
    n, c, h, wd = x.shape
    o = w.shape[0]
    ho, wo = _conv_geometry(h, wd, stride)
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((n, c, 9, ho, wo), dtype=x.data.dtype)
    for ky in range(3):
        for kx in range(3):
            cols[:, :, ky * 3 + kx] = xp[:, :, ky:ky + stride * ho:stride, kx:kx + stride * wo:stride]
    cols = cols.reshape(n, c * 9, ho * wo)
    wm = w.data.reshape(o, c * 9)
    y = np.matmul(wm, cols) + b.data[None, :, None]
    out = Tensor(y.reshape(n, o, ho, wo), _track(x, w, b), (x, w, b))

    def backward(g):
        g2 = g.reshape(n, o, ho * wo)
        if b.requires_grad:
            b._accumulate(g2.sum(axis=(0, 2)))
        if w.requires_grad:
            w._accumulate(np.einsum("nol,nkl->ok", g2, cols).reshape(w.shape))
        if x.requires_grad:
            dcols = np.matmul(wm.T, g2).reshape(n, c, 9, ho, wo)
            dxp = np.zeros_like(xp)
            for ky in range(3):
                for kx in range(3):
                    dxp[:, :, ky:ky + stride * ho:stride, kx:kx + stride * wo:stride] += dcols[:, :, ky * 3 + kx]
            x._accumulate(dxp[:, :, 1:-1, 1:-1])

    out._backward = backward if out.requires_grad else None
    return out


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean of squared differences over every scalar entry."""
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=pred.data.dtype)
    if target.shape != pred.shape:
        raise ValueError(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target
    n = diff.size
    out = Tensor(np.asarray(np.sum(diff * diff) / n, dtype=pred.data.dtype), pred.requires_grad, (pred,))

    def backward(g):
        pred._accumulate(g * 2.0 * diff / n)

    out._backward = backward if out.requires_grad else None
    return out
