"""Binary adjacency between patch tokens inside an attention window.

Two tokens are linked when their Minkowski distance clears a threshold.
The comparison direction is configurable: ``"gt"`` links *distant*
tokens (an edge when d > T), ``"lt"`` links *close* ones (d < T).  Ties
at exactly T produce no edge in either mode.

Adjacency is a hard mask, not a learned quantity, so everything here
works on raw arrays; nothing is recorded on the tape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "AdjacencyConfig",
    "AdjacencySet",
    "minkowski_distance",
    "pairwise_distances",
    "build_adjacency",
    "update_adjacency",
]

# How many times update_adjacency has run since import (or the last
# reset).  Tests use this to pin down the recompute schedule: once per
# feature-extraction group, not once per layer.
UPDATE_CALLS = 0


@dataclass(frozen=True)
class AdjacencyConfig:
    """Knobs for graph construction.

    p: Minkowski order, one of 1, 2, or ``math.inf``.
    threshold: nonnegative cutoff the distance is compared against.
    comparison: "gt" links pairs with distance above the threshold,
        "lt" pairs below it.
    normalize_tokens: scale each token to unit Euclidean norm before
        measuring distances, so thresholds live on a bounded scale.
    self_loops: force the diagonal to 1 so no token is ever isolated.
    """

    p: float = 2.0
    threshold: float = 0.75
    comparison: str = "gt"
    normalize_tokens: bool = True
    self_loops: bool = True

    def __post_init__(self):
        if self.p not in (1, 2, math.inf):
            raise ValueError(f"adjacency p must be 1, 2, or inf, got {self.p}")
        if self.threshold < 0:
            raise ValueError(
                f"adjacency threshold must be >= 0, got {self.threshold}")
        if self.comparison not in ("gt", "lt"):
            raise ValueError(
                f"adjacency comparison must be 'gt' or 'lt', got "
                f"{self.comparison!r}")


@dataclass
class AdjacencySet:
    """One 0/1 matrix per window, ordered batch-major then row-major
    over the window grid (matching the attention window layout)."""

    matrices: np.ndarray  # [n_windows_total, M, M]
    window: int
    batch: int
    grid_h: int
    grid_w: int

    @property
    def n_windows(self) -> int:
        return int(self.matrices.shape[0])

    def edge_density(self) -> float:
        """Fraction of entries set, averaged over all windows."""
        return float(self.matrices.mean())


def minkowski_distance(a: np.ndarray, b: np.ndarray, p: float) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(
            f"minkowski_distance: shapes differ, {a.shape} vs {b.shape}")
    d = np.abs(a - b)
    if p == 1:
        return float(d.sum())
    if p == 2:
        return float(np.sqrt((d * d).sum()))
    if p == math.inf:
        return float(d.max(initial=0.0))
    raise ValueError(f"minkowski_distance: p must be 1, 2, or inf, got {p}")


def _unit_rows(tokens: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(tokens, axis=-1, keepdims=True)
    return tokens / np.where(norms > 0.0, norms, 1.0)


def pairwise_distances(tokens: np.ndarray, cfg: AdjacencyConfig) -> np.ndarray:
    """All-pairs distances for one window's tokens [M, C] -> [M, M].

    Also accepts a stacked [..., M, C] batch of windows.
    """
    t = np.asarray(tokens, dtype=np.float64)
    if cfg.normalize_tokens:
        t = _unit_rows(t)
    d = np.abs(t[..., :, None, :] - t[..., None, :, :])
    if cfg.p == 1:
        return d.sum(axis=-1)
    if cfg.p == 2:
        return np.sqrt((d * d).sum(axis=-1))
    return d.max(axis=-1)


def build_adjacency(distances: np.ndarray, cfg: AdjacencyConfig) -> np.ndarray:
    """Threshold a distance matrix into 0/1 edges (strict comparison)."""
    d = np.asarray(distances, dtype=np.float64)
    if cfg.comparison == "gt":
        a = (d > cfg.threshold).astype(np.float64)
    else:
        a = (d < cfg.threshold).astype(np.float64)
    if cfg.self_loops:
        eye = np.eye(d.shape[-1], dtype=np.float64)
        a = np.maximum(a, eye)
    return a


def partition_windows(features: np.ndarray, window: int) -> np.ndarray:
    """[N, C, H, W] -> [N * (H/w) * (W/w), w*w, C] token groups.

    Windows are enumerated batch-major, then row-major over the window
    grid; tokens inside a window are row-major over its pixels.
    """
    n, c, h, w = features.shape
    if h % window or w % window:
        raise ValueError(
            f"feature extents {h}x{w} not divisible by window {window}")
    gh, gw = h // window, w // window
    t = features.reshape(n, c, gh, window, gw, window)
    t = t.transpose(0, 2, 4, 3, 5, 1)  # [N, gh, gw, win, win, C]
    return t.reshape(n * gh * gw, window * window, c)


def update_adjacency(features: np.ndarray, window: int,
                     cfg: AdjacencyConfig) -> AdjacencySet:
    """Rebuild every window's adjacency from current feature values."""
    global UPDATE_CALLS
    UPDATE_CALLS += 1
    n, _, h, w = features.shape
    tokens = partition_windows(np.asarray(features, dtype=np.float64), window)
    mats = build_adjacency(pairwise_distances(tokens, cfg), cfg)
    return AdjacencySet(matrices=mats, window=window, batch=n,
                        grid_h=h // window, grid_w=w // window)
