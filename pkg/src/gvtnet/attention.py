"""Windowed multi-head attention kernels.

Two flavors share the same Q/K/V plumbing:

* graph attention, where a binary adjacency matrix gates the score
  matrix (multiplicatively by default, or as a -100 additive mask), and
* shifted-window attention with a learned relative position bias plus
  the cyclic-shift region mask.

Tokens are projected per window through depthwise-separable 3x3 convs
(a plain 1x1 variant exists for ablation), so the projections see a
little spatial context instead of acting pointwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .module import Module, trunc_normal
from .ops import conv2d, depthwise_separable_conv, softmax_lastdim, take_rows
from .tensor import ShapeError, Tensor

__all__ = [
    "NEG_MASK",
    "AttentionParams",
    "ShiftMask",
    "window_partition",
    "window_reverse",
    "split_heads",
    "merge_heads",
    "qkv_project",
    "out_project",
    "graph_window_attention",
    "relative_position_index",
    "relative_position_bias",
    "shift_mask",
    "swin_window_attention",
]

# Additive mask value: large enough that e^-100 vanishes against any
# unmasked logit, small enough to keep float gradients finite.
NEG_MASK = -100.0


def window_partition(x: Tensor, window: int) -> Tensor:
    """[N, H, W, C] -> [N*(H/w)*(W/w), w*w, C], row-major everywhere."""
    n, h, w, c = x.shape
    if h % window or w % window:
        raise ShapeError(
            f"window_partition: extents {h}x{w} not divisible by {window}")
    gh, gw = h // window, w // window
    t = x.reshape((n, gh, window, gw, window, c))
    t = t.transpose((0, 1, 3, 2, 4, 5))
    return t.reshape((n * gh * gw, window * window, c))


def window_reverse(windows: Tensor, window: int, h: int, w: int) -> Tensor:
    """Inverse of :func:`window_partition`."""
    gh, gw = h // window, w // window
    n = windows.shape[0] // (gh * gw)
    c = windows.shape[-1]
    t = windows.reshape((n, gh, gw, window, window, c))
    t = t.transpose((0, 1, 3, 2, 4, 5))
    return t.reshape((n, h, w, c))


def split_heads(x: Tensor, heads: int) -> Tensor:
    """[B, M, C] -> [B, heads, M, C/heads]."""
    b, m, c = x.shape
    if c % heads:
        raise ShapeError(f"split_heads: {c} channels not divisible by {heads}")
    return x.reshape((b, m, heads, c // heads)).transpose((0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    """[B, heads, M, d] -> [B, M, heads*d]."""
    b, heads, m, d = x.shape
    return x.transpose((0, 2, 1, 3)).reshape((b, m, heads * d))


class _Projection(Module):
    """One of the Q/K/V/output maps, applied to a window laid out as a
    [B, C, w, w] image. Depthwise 3x3 + pointwise 1x1 by default; the
    pointwise path alone when ``use_depthwise`` is off."""

    def __init__(self, channels: int, rng: np.random.Generator,
                 use_depthwise: bool = True):
        if use_depthwise:
            self.dw = Tensor(trunc_normal(rng, (channels, 1, 3, 3)),
                             requires_grad=True)
        else:
            self.dw = None
        self.pw = Tensor(trunc_normal(rng, (channels, channels, 1, 1)),
                         requires_grad=True)
        self.bias = Tensor(np.zeros(channels), requires_grad=True)

    def __call__(self, ximg: Tensor) -> Tensor:
        if self.dw is None:
            return conv2d(ximg, self.pw, self.bias)
        return depthwise_separable_conv(ximg, self.dw, self.pw, self.bias)


class AttentionParams(Module):
    """Learned state for one attention layer.

    ``with_position_bias`` adds the (2w-1)^2 x heads relative position
    table used by the shifted-window layers; graph layers leave it out.
    """

    def __init__(self, channels: int, heads: int, window: int,
                 rng: np.random.Generator, use_depthwise: bool = True,
                 with_position_bias: bool = False):
        if channels % heads:
            raise ShapeError(
                f"channels {channels} not divisible by {heads} heads")
        self.channels = channels
        self.heads = heads
        self.window = window
        self.head_dim = channels // heads
        self.q = _Projection(channels, rng, use_depthwise)
        self.k = _Projection(channels, rng, use_depthwise)
        self.v = _Projection(channels, rng, use_depthwise)
        self.out = _Projection(channels, rng, use_depthwise=False)
        if with_position_bias:
            span = 2 * window - 1
            self.bias_table = Tensor(np.zeros((span * span, heads)),
                                     requires_grad=True)
        else:
            self.bias_table = None


def _tokens_to_image(x: Tensor, window: int) -> Tensor:
    b, m, c = x.shape
    if m != window * window:
        raise ShapeError(
            f"expected {window * window} tokens per window, got {m}")
    return x.reshape((b, window, window, c)).transpose((0, 3, 1, 2))


def _image_to_tokens(x: Tensor) -> Tensor:
    b, c, h, w = x.shape
    return x.transpose((0, 2, 3, 1)).reshape((b, h * w, c))


def qkv_project(x: Tensor, params: AttentionParams
                ) -> tuple[Tensor, Tensor, Tensor]:
    """Project window tokens [B, M, C] to per-head Q, K, V."""
    if x.shape[-1] != params.channels:
        raise ShapeError(
            f"qkv_project: input has {x.shape[-1]} channels, "
            f"params expect {params.channels}")
    img = _tokens_to_image(x, params.window)
    q = split_heads(_image_to_tokens(params.q(img)), params.heads)
    k = split_heads(_image_to_tokens(params.k(img)), params.heads)
    v = split_heads(_image_to_tokens(params.v(img)), params.heads)
    return q, k, v


def out_project(x: Tensor, params: AttentionParams) -> Tensor:
    """Merge heads and apply the output 1x1 conv: [B,heads,M,d] -> [B,M,C]."""
    img = _tokens_to_image(merge_heads(x), params.window)
    return _image_to_tokens(params.out(img))


def _attend(scores: Tensor, v: Tensor) -> Tensor:
    return softmax_lastdim(scores) @ v


def graph_window_attention(q: Tensor, k: Tensor, v: Tensor,
                           adj: np.ndarray, mode: str = "hadamard") -> Tensor:
    """Adjacency-gated attention.

    hadamard: softmax((QK^T * A) / sqrt(d)) V.  Non-neighbor logits are
    zeroed, not removed, so they keep weight e^0 in the softmax; that is
    the literal reading of the gating-by-multiplication rule.
    additive: softmax(QK^T / sqrt(d) + mask) V with mask = -100 on
    non-neighbors, driving their weight to numerical zero.
    """
    if mode not in ("hadamard", "additive"):
        raise ValueError(f"unknown graph attention mode {mode!r}")
    m = q.shape[2]
    a = np.asarray(adj, dtype=np.float64)
    if a.shape[-2:] != (m, m):
        raise ShapeError(
            f"adjacency extent {a.shape[-2:]} does not match {m} tokens")
    if a.ndim == 3:
        a = a[:, None]  # broadcast over heads
    scale = 1.0 / np.sqrt(q.shape[-1])
    scores = q @ k.swap_last_two()
    if mode == "hadamard":
        scores = scores * a * scale
    else:
        scores = scores * scale + np.where(a == 0.0, NEG_MASK, 0.0)
    return _attend(scores, v)


@lru_cache(maxsize=None)
def relative_position_index(window: int) -> np.ndarray:
    """[M, M] map from token pair (i, j) to a row of the bias table.

    Offsets (drow, dcol) in [-(w-1), w-1] are indexed row-major as
    (drow + w - 1) * (2w - 1) + (dcol + w - 1).
    """
    coords = np.stack(np.meshgrid(np.arange(window), np.arange(window),
                                  indexing="ij"), axis=-1).reshape(-1, 2)
    delta = coords[:, None, :] - coords[None, :, :]
    idx = (delta[..., 0] + window - 1) * (2 * window - 1) \
        + (delta[..., 1] + window - 1)
    idx.setflags(write=False)
    return idx


def relative_position_bias(table: Tensor, window: int) -> Tensor:
    """Expand the learned table to per-pair biases [heads, M, M]."""
    span = 2 * window - 1
    m = window * window
    if table.shape[0] != span * span:
        raise ShapeError(
            f"bias table has {table.shape[0]} rows, window {window} "
            f"needs {span * span}")
    idx = relative_position_index(window).reshape(-1)
    rows = take_rows(table, idx)  # [M*M, heads]
    return rows.reshape((m, m, table.shape[1])).transpose((2, 0, 1))


@dataclass
class ShiftMask:
    """Additive region masks for one image's windows after a cyclic
    shift; entries are 0 or -100."""

    masks: np.ndarray  # [n_windows, M, M]
    shift: int
    window: int

    def for_batch(self, n: int) -> np.ndarray:
        """Tile to [n * n_windows, 1, M, M] for broadcasting over heads."""
        tiled = np.tile(self.masks, (n, 1, 1))
        return tiled[:, None]


def shift_mask(h: int, w: int, window: int, shift: int) -> ShiftMask:
    """Mask token pairs whose pre-shift regions differ.

    The cyclic shift folds three row bands and three column bands into
    the window grid; tokens from different bands must not attend to one
    another.
    """
    if not 0 <= shift < window:
        raise ShapeError(f"shift must be in [0, {window}), got {shift}")
    if h % window or w % window:
        raise ShapeError(
            f"shift_mask: extents {h}x{w} not divisible by {window}")
    m = window * window
    n_win = (h // window) * (w // window)
    if shift == 0:
        return ShiftMask(np.zeros((n_win, m, m)), shift, window)

    labels = np.zeros((h, w))
    bands = (slice(0, -window), slice(-window, -shift), slice(-shift, None))
    tag = 0
    for hband in bands:
        for wband in bands:
            labels[hband, wband] = tag
            tag += 1
    gh, gw = h // window, w // window
    win_labels = labels.reshape(gh, window, gw, window) \
        .transpose(0, 2, 1, 3).reshape(n_win, m)
    diff = win_labels[:, None, :] - win_labels[:, :, None]
    return ShiftMask(np.where(diff != 0.0, NEG_MASK, 0.0), shift, window)


def swin_window_attention(q: Tensor, k: Tensor, v: Tensor,
                          bias: Tensor | None = None,
                          mask: np.ndarray | None = None) -> Tensor:
    """softmax(QK^T / sqrt(d) + bias + mask) V."""
    scale = 1.0 / np.sqrt(q.shape[-1])
    scores = (q @ k.swap_last_two()) * scale
    if bias is not None:
        scores = scores + bias
    if mask is not None:
        scores = scores + mask
    return _attend(scores, v)
