"""Neural-network operations recorded on the tape.

Convolutions use a sliding-window view plus ``einsum`` for the forward
pass; input gradients come from the transposed-convolution identity
(zero-dilate the output gradient by the stride, pad by ``k - 1``, and
correlate with the spatially flipped kernel).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, _accum, make_op

__all__ = [
    "conv2d",
    "depthwise_conv2d",
    "depthwise_separable_conv",
    "layer_norm",
    "softmax_lastdim",
    "gelu",
    "pixel_shuffle",
    "pixel_unshuffle",
    "take_rows",
]

_GELU_C = float(np.sqrt(2.0 / np.pi))
_GELU_K = 0.044715


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation over NCHW input with an OCkk kernel."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input must be NCHW, got rank {x.ndim}")
    if w.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be OCkk, got rank {w.ndim}")
    n, c, h, wd = x.shape
    o, cw, kh, kw = w.shape
    if kh != kw:
        raise ShapeError(f"conv2d: kernel must be square, got {kh}x{kw}")
    if cw != c:
        raise ShapeError(
            f"conv2d: input channel extent is {c}, kernel expects {cw}")
    if b is not None and b.shape != (o,):
        raise ShapeError(
            f"conv2d: bias extent {b.shape} does not match {o} output channels")
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"conv2d: kernel {kh}x{kw} does not fit input {h}x{wd} with pad {pad}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.einsum("nchwpq,ocpq->nohw", win, w.data, optimize=True)
    if b is not None:
        out = out + b.data[:, None, None]

    def backward(g):
        if b is not None and b.requires_grad:
            _accum(b, g.sum(axis=(0, 2, 3)))
        if w.requires_grad:
            _accum(w, np.einsum("nchwpq,nohw->ocpq", win, g, optimize=True))
        if x.requires_grad:
            _accum(x, _conv2d_input_grad(g, w.data, x.shape, stride, pad))

    parents = (x, w) if b is None else (x, w, b)
    return make_op(out, parents, backward)


def _conv2d_input_grad(g, wdata, xshape, stride, pad):
    n, c, h, wd = xshape
    o, _, k, _ = wdata.shape
    ho, wo = g.shape[2], g.shape[3]
    if stride > 1:
        gd = np.zeros((n, o, (ho - 1) * stride + 1, (wo - 1) * stride + 1),
                      dtype=g.dtype)
        gd[:, :, ::stride, ::stride] = g
    else:
        gd = g
    # Stride may leave unused trailing rows/columns; pad them back with zeros.
    extra_h = h + 2 * pad - ((ho - 1) * stride + k)
    extra_w = wd + 2 * pad - ((wo - 1) * stride + k)
    gp = np.pad(gd, ((0, 0), (0, 0),
                     (k - 1, k - 1 + extra_h), (k - 1, k - 1 + extra_w)))
    win = sliding_window_view(gp, (k, k), axis=(2, 3))
    gx = np.einsum("nohwpq,ocpq->nchw", win, wdata[:, :, ::-1, ::-1],
                   optimize=True)
    return gx[:, :, pad:pad + h, pad:pad + wd]


def depthwise_conv2d(x: Tensor, w: Tensor, pad: int = 0) -> Tensor:
    """Per-channel 2-D cross-correlation (kernel shaped [C, 1, k, k])."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError("depthwise_conv2d: expects NCHW input and C1kk kernel")
    n, c, h, wd = x.shape
    cw, one, kh, kw = w.shape
    if one != 1 or kh != kw:
        raise ShapeError(
            f"depthwise_conv2d: kernel must be [C,1,k,k], got {w.shape}")
    if cw != c:
        raise ShapeError(
            f"depthwise_conv2d: input channel extent is {c}, kernel expects {cw}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    out = np.einsum("nchwpq,cpq->nchw", win, w.data[:, 0], optimize=True)

    def backward(g):
        if w.requires_grad:
            gw = np.einsum("nchwpq,nchw->cpq", win, g, optimize=True)
            _accum(w, gw[:, None])
        if x.requires_grad:
            gp = np.pad(g, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
            gwin = sliding_window_view(gp, (kh, kw), axis=(2, 3))
            gx = np.einsum("nchwpq,cpq->nchw", gwin,
                           w.data[:, 0, ::-1, ::-1], optimize=True)
            _accum(x, gx[:, :, pad:pad + h, pad:pad + wd])

    return make_op(out, (x, w), backward)


def depthwise_separable_conv(x: Tensor, dw: Tensor, pw: Tensor,
                             b: Tensor | None = None) -> Tensor:
    """Per-channel conv followed by a 1x1 conv, same spatial extent."""
    k = dw.shape[-1]
    return conv2d(depthwise_conv2d(x, dw, pad=k // 2), pw, b)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               eps: float = 1e-5, axis: int = -1) -> Tensor:
    """Normalize one axis to zero mean / unit variance, then affine."""
    if eps < 0:
        raise ShapeError(f"layer_norm: eps must be >= 0, got {eps}")
    ax = axis % x.ndim
    c = x.shape[ax]
    if gamma.shape != (c,):
        raise ShapeError(
            f"layer_norm: gamma extent {gamma.shape} does not match axis extent {c}")
    if beta.shape != (c,):
        raise ShapeError(
            f"layer_norm: beta extent {beta.shape} does not match axis extent {c}")

    mu = x.data.mean(axis=ax, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=ax, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    bshape = [1] * x.ndim
    bshape[ax] = c
    gb = gamma.data.reshape(bshape)
    out = gb * xhat + beta.data.reshape(bshape)

    def backward(g):
        other_axes = tuple(i for i in range(x.ndim) if i != ax)
        if beta.requires_grad:
            _accum(beta, g.sum(axis=other_axes))
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).sum(axis=other_axes))
        if x.requires_grad:
            dxhat = g * gb
            m1 = dxhat.mean(axis=ax, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=ax, keepdims=True)
            _accum(x, inv * (dxhat - m1 - xhat * m2))

    return make_op(out, (x, gamma, beta), backward)


def softmax_lastdim(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by max subtraction."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        if x.requires_grad:
            _accum(x, y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return make_op(y, (x,), backward)


def gelu(x: Tensor) -> Tensor:
    """GELU via the tanh approximation:

    ``0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 * x^3)))``
    """
    inner = _GELU_C * (x.data + _GELU_K * x.data ** 3)
    t = np.tanh(inner)
    out = 0.5 * x.data * (1.0 + t)

    def backward(g):
        if x.requires_grad:
            d_inner = _GELU_C * (1.0 + 3.0 * _GELU_K * x.data ** 2)
            dx = 0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * d_inner
            _accum(x, g * dx)

    return make_op(out, (x,), backward)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Rearrange [N, C*r^2, H, W] into [N, C, H*r, W*r].

    Channel ``c*r*r + i*r + j`` lands on spatial offset ``(i, j)`` inside
    each upsampled cell.
    """
    if r == 1:
        return x
    n, c, h, w = x.shape
    if c % (r * r):
        raise ShapeError(
            f"pixel_shuffle: channel extent {c} not divisible by r^2 = {r * r}")
    co = c // (r * r)
    t = x.reshape((n, co, r, r, h, w))
    t = t.transpose((0, 1, 4, 2, 5, 3))
    return t.reshape((n, co, h * r, w * r))


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Inverse of :func:`pixel_shuffle`."""
    if r == 1:
        return x
    n, c, h, w = x.shape
    if h % r or w % r:
        raise ShapeError(
            f"pixel_unshuffle: spatial extents {h}x{w} not divisible by {r}")
    t = x.reshape((n, c, h // r, r, w // r, r))
    t = t.transpose((0, 1, 3, 5, 2, 4))
    return t.reshape((n, c * r * r, h // r, w // r))


def take_rows(table: Tensor, indices: np.ndarray) -> Tensor:
    """Gather rows of a 2-D table; gradients scatter-add back."""
    idx = np.asarray(indices)
    if table.ndim != 2:
        raise ShapeError(f"take_rows: table must be 2-D, got rank {table.ndim}")

    def backward(g):
        if table.requires_grad:
            buf = np.zeros_like(table.data)
            np.add.at(buf, idx, g)
            _accum(table, buf)

    return make_op(table.data[idx], (table,), backward)
