"""The super-resolution network.

Pipeline: a 3x3 conv lifts the RGB input to C feature channels, a stack
of groups refines them (each group rebuilds its token graph once, runs
its dual-modeling blocks, and closes with a conv plus skip), a trailing
conv plus the global skip completes the body, and pixel-shuffle stages
upsample back to RGB.

A dual modeling block is a shifted-window transformer layer followed by
a graph-attention layer; either half can be dropped for ablations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .adjacency import AdjacencyConfig, AdjacencySet, update_adjacency
from .attention import (
    AttentionParams,
    graph_window_attention,
    out_project,
    qkv_project,
    relative_position_bias,
    shift_mask,
    swin_window_attention,
    window_partition,
    window_reverse,
)
from .module import Module, trunc_normal
from .ops import conv2d, gelu, layer_norm, pixel_shuffle
from .tensor import NumericsError, ShapeError, Tensor, no_grad

__all__ = ["NetConfig", "GVTNet", "LayerNorm2d", "Mlp", "TransformerLayer",
           "DualModelingBlock", "GVTGroup", "Reconstruction"]


@dataclass(frozen=True)
class NetConfig:
    """Architecture hyperparameters.

    The defaults are a desk-scale setup that trains in minutes; the
    full-size model is the same structure with more groups, blocks,
    channels, and heads.
    """

    n_groups: int = 2
    n_blocks: int = 2
    channels: int = 32
    window: int = 4
    heads: int = 2
    scale: int = 2
    mlp_ratio: float = 4.0
    adjacency: AdjacencyConfig = field(default_factory=AdjacencyConfig)
    gvt_mask_mode: str = "hadamard"
    disable_stl: bool = False
    disable_gvt: bool = False
    plain_linear_qkv: bool = False

    def __post_init__(self):
        if self.n_groups < 1 or self.n_blocks < 1:
            raise ValueError("n_groups and n_blocks must be >= 1")
        if self.channels % self.heads:
            raise ValueError(
                f"channels {self.channels} not divisible by heads {self.heads}")
        if self.scale not in (2, 4, 8):
            raise ValueError(f"scale must be 2, 4, or 8, got {self.scale}")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if self.mlp_ratio <= 0:
            raise ValueError(f"mlp_ratio must be > 0, got {self.mlp_ratio}")
        if self.gvt_mask_mode not in ("hadamard", "additive"):
            raise ValueError(
                f"gvt_mask_mode must be hadamard or additive, got "
                f"{self.gvt_mask_mode!r}")
        if self.disable_stl and self.disable_gvt:
            raise ValueError("cannot disable both layer kinds")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        d = dict(d)
        adj = d.pop("adjacency", {})
        return cls(adjacency=AdjacencyConfig(**adj), **d)


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, k: int,
                 rng: np.random.Generator):
        self.w = Tensor(trunc_normal(rng, (out_ch, in_ch, k, k)),
                        requires_grad=True)
        self.b = Tensor(np.zeros(out_ch), requires_grad=True)
        self.pad = k // 2

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, self.b, pad=self.pad)


class LayerNorm2d(Module):
    """Layer norm over the channel axis of NCHW features."""

    def __init__(self, channels: int):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, axis=1)


class Mlp(Module):
    """Position-wise two-layer expansion, realized as 1x1 convs."""

    def __init__(self, channels: int, ratio: float, rng: np.random.Generator):
        hidden = int(round(channels * ratio))
        self.fc1 = Conv2d(channels, hidden, 1, rng)
        self.fc2 = Conv2d(hidden, channels, 1, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


class TransformerLayer(Module):
    """Pre-norm residual layer: x + Attn(LN(x)), then + MLP(LN(.)).

    kind "stl" runs shifted-window attention with the learned position
    bias; kind "gvtl" runs graph attention against the adjacency passed
    in at call time (no shift, no bias).
    """

    def __init__(self, cfg: NetConfig, kind: str, shift: int,
                 rng: np.random.Generator):
        if kind not in ("stl", "gvtl"):
            raise ValueError(f"unknown layer kind {kind!r}")
        self.kind = kind
        self.window = cfg.window
        self.shift = shift
        self.mask_mode = cfg.gvt_mask_mode
        self.norm1 = LayerNorm2d(cfg.channels)
        self.attn = AttentionParams(
            cfg.channels, cfg.heads, cfg.window, rng,
            use_depthwise=not cfg.plain_linear_qkv,
            with_position_bias=(kind == "stl"))
        self.norm2 = LayerNorm2d(cfg.channels)
        self.mlp = Mlp(cfg.channels, cfg.mlp_ratio, rng)

    def __call__(self, x: Tensor,
                 adjacency: AdjacencySet | None = None) -> Tensor:
        n, _, h, w = x.shape
        win = self.window
        if h % win or w % win:
            raise ShapeError(
                f"feature extents {h}x{w} not divisible by window {win}")
        # Shifting a grid of one window would only rotate it cyclically.
        shift = self.shift if min(h, w) > win else 0

        y = self.norm1(x).transpose((0, 2, 3, 1))  # NHWC
        if shift:
            y = y.roll((-shift, -shift), (1, 2))
        tokens = window_partition(y, win)
        q, k, v = qkv_project(tokens, self.attn)
        if self.kind == "gvtl":
            if adjacency is None:
                raise ValueError("graph layer called without an adjacency set")
            if adjacency.matrices.shape[0] != tokens.shape[0]:
                raise ShapeError(
                    f"adjacency holds {adjacency.matrices.shape[0]} windows, "
                    f"features produce {tokens.shape[0]}")
            o = graph_window_attention(q, k, v, adjacency.matrices,
                                       self.mask_mode)
        else:
            bias = relative_position_bias(self.attn.bias_table, win)
            mask = shift_mask(h, w, win, shift).for_batch(n) if shift else None
            o = swin_window_attention(q, k, v, bias, mask)
        y = window_reverse(out_project(o, self.attn), win, h, w)
        if shift:
            y = y.roll((shift, shift), (1, 2))
        x = x + y.transpose((0, 3, 1, 2))
        return x + self.mlp(self.norm2(x))


class DualModelingBlock(Module):
    """Shifted-window layer then graph layer; ablations drop one half."""

    def __init__(self, cfg: NetConfig, index: int, rng: np.random.Generator):
        shift = 0 if index % 2 == 0 else cfg.window // 2
        self.stl = None if cfg.disable_stl else TransformerLayer(
            cfg, "stl", shift, rng)
        self.gvtl = None if cfg.disable_gvt else TransformerLayer(
            cfg, "gvtl", 0, rng)

    def __call__(self, x: Tensor, adjacency: AdjacencySet | None) -> Tensor:
        if self.stl is not None:
            x = self.stl(x)
        if self.gvtl is not None:
            x = self.gvtl(x, adjacency)
        return x


class GVTGroup(Module):
    """A run of blocks sharing one adjacency, closed by conv + skip.

    The adjacency is rebuilt from the group's input features on every
    forward pass and reused by each graph layer inside the group.
    """

    def __init__(self, cfg: NetConfig, rng: np.random.Generator):
        self.cfg_window = cfg.window
        self.adj_cfg = cfg.adjacency
        self.needs_adjacency = not cfg.disable_gvt
        self.blocks = [DualModelingBlock(cfg, i, rng)
                       for i in range(cfg.n_blocks)]
        self.conv = Conv2d(cfg.channels, cfg.channels, 3, rng)

    def __call__(self, x: Tensor) -> Tensor:
        adjacency = None
        if self.needs_adjacency:
            adjacency = update_adjacency(x.data, self.cfg_window, self.adj_cfg)
        y = x
        for block in self.blocks:
            y = block(y, adjacency)
        return self.conv(y) + x


class Reconstruction(Module):
    """log2(scale) rounds of conv-to-4C + 2x pixel shuffle, then a 3x3
    conv down to RGB."""

    def __init__(self, cfg: NetConfig, rng: np.random.Generator):
        c = cfg.channels
        self.stages = [Conv2d(c, 4 * c, 3, rng)
                       for _ in range(int(math.log2(cfg.scale)))]
        self.final = Conv2d(c, 3, 3, rng)

    def __call__(self, x: Tensor) -> Tensor:
        for stage in self.stages:
            x = pixel_shuffle(stage(x), 2)
        return self.final(x)


class GVTNet(Module):
    """Full model; construction is deterministic given (config, seed)."""

    def __init__(self, cfg: NetConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.shallow = Conv2d(3, cfg.channels, 3, rng)
        self.groups = [GVTGroup(cfg, rng) for _ in range(cfg.n_groups)]
        self.body_conv = Conv2d(cfg.channels, cfg.channels, 3, rng)
        self.reconstruction = Reconstruction(cfg, rng)

    def __call__(self, lr: Tensor) -> Tensor:
        return self.forward(lr)

    def forward(self, lr: Tensor) -> Tensor:
        if lr.ndim != 4 or lr.shape[1] != 3:
            raise ShapeError(
                f"expected [N, 3, H, W] input, got {lr.shape}")
        _, _, h, w = lr.shape
        if h % self.cfg.window or w % self.cfg.window:
            raise ShapeError(
                f"input extents {h}x{w} not divisible by window "
                f"{self.cfg.window}; pad first (infer does this)")
        self._check_finite()
        f0 = self.shallow(lr)
        y = f0
        for group in self.groups:
            y = group(y)
        deep = self.body_conv(y) + f0
        return self.reconstruction(deep)

    def _check_finite(self) -> None:
        for name, p in self.named_parameters():
            if not np.isfinite(p.data).all():
                raise NumericsError(f"parameter {name} contains non-finite values")

    def group_input_features(self, lr: np.ndarray, group: int) -> np.ndarray:
        """Feature map [N, C, H, W] entering the given residual group.

        This is what that group's adjacency is built from; exposed so the
        graph structure can be inspected offline.
        """
        if not 0 <= group < len(self.groups):
            raise IndexError(
                f"group {group} out of range; model has {len(self.groups)}")
        arr = np.asarray(lr, dtype=np.float64)
        if arr.ndim == 3:
            arr = arr[None]
        with no_grad():
            y = self.shallow(Tensor(arr))
            for g in self.groups[:group]:
                y = g(y)
        return y.data

    def infer(self, lr: np.ndarray) -> np.ndarray:
        """Run on a [3, H, W] or [N, 3, H, W] array in [0, 1]; inputs not
        divisible by the window are reflection-padded, and the output is
        cropped back to scale * (H, W)."""
        arr = np.asarray(lr, dtype=np.float64)
        squeeze = arr.ndim == 3
        if squeeze:
            arr = arr[None]
        _, _, h, w = arr.shape
        win = self.cfg.window
        ph = (win - h % win) % win
        pw = (win - w % win) % win
        if ph or pw:
            arr = np.pad(arr, ((0, 0), (0, 0), (0, ph), (0, pw)),
                         mode="reflect")
        with no_grad():
            out = self.forward(Tensor(arr)).data
        s = self.cfg.scale
        out = out[:, :, :s * h, :s * w]
        return out[0] if squeeze else out

    def describe(self) -> dict:
        parts = {
            "shallow": self.shallow.n_params(),
            "groups": sum(g.n_params() for g in self.groups),
            "body_conv": self.body_conv.n_params(),
            "reconstruction": self.reconstruction.n_params(),
        }
        parts["total"] = sum(parts.values())
        parts["per_group"] = [g.n_params() for g in self.groups]
        return parts
