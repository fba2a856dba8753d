"""Image resampling and the bundled training fixtures.

The resampler is a separable antialiased bicubic (Catmull-Rom flavor,
a = -0.5): per-axis dense weight matrices, kernel widened by the scale
factor when shrinking, boundary handled by clamping source indices, and
rows renormalized so constants pass through unchanged.

The fixture set is four procedurally generated 32x32 RGB images (smooth
oriented gradients, soft blobs, one soft-edged disk each); the package
ships no photographs.
"""

from __future__ import annotations

import numpy as np

__all__ = ["bicubic_resize", "bicubic_downsample", "fixture_images",
           "make_pairs"]

_A = -0.5  # cubic kernel sharpness


def _cubic(x: np.ndarray) -> np.ndarray:
    x = np.abs(x)
    x2 = x * x
    x3 = x2 * x
    near = (_A + 2.0) * x3 - (_A + 3.0) * x2 + 1.0
    far = _A * x3 - 5.0 * _A * x2 + 8.0 * _A * x - 4.0 * _A
    return np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))


def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Dense [n_out, n_in] row-stochastic resampling weights for one axis."""
    ratio = n_out / n_in
    kscale = min(ratio, 1.0)  # widen the kernel when shrinking
    support = 2.0 / kscale
    mat = np.zeros((n_out, n_in))
    for i in range(n_out):
        center = (i + 0.5) / ratio - 0.5
        lo = int(np.floor(center - support)) + 1
        src = np.arange(lo, int(np.floor(center + support)) + 1)
        weights = _cubic((center - src) * kscale) * kscale
        np.add.at(mat[i], np.clip(src, 0, n_in - 1), weights)
    return mat / mat.sum(axis=1, keepdims=True)


def bicubic_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize [..., H, W] to [..., out_h, out_w]."""
    arr = np.asarray(img, dtype=np.float64)
    h, w = arr.shape[-2], arr.shape[-1]
    mh = _resize_matrix(h, out_h)
    mw = _resize_matrix(w, out_w)
    return np.einsum("oi,...ij,pj->...op", mh, arr, mw, optimize=True)


def bicubic_downsample(img: np.ndarray, scale: int) -> np.ndarray:
    h, w = img.shape[-2], img.shape[-1]
    if h % scale or w % scale:
        raise ValueError(
            f"extents {h}x{w} not divisible by scale {scale}")
    return bicubic_resize(img, h // scale, w // scale)


def fixture_images(n: int = 4, size: int = 32, seed: int = 0
                   ) -> list[np.ndarray]:
    """Deterministic smooth test images, [3, size, size] each, in
    roughly [0.02, 0.98]."""
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:size, 0:size] / (size - 1)
    images = []
    for _ in range(n):
        img = np.empty((3, size, size))
        for c in range(3):
            theta = rng.uniform(0.0, 2.0 * np.pi)
            ramp = np.cos(theta) * xs + np.sin(theta) * ys
            img[c] = 0.5 + 0.35 * (ramp - ramp.mean())
        for _ in range(2):
            cy, cx = rng.uniform(0.2, 0.8, size=2)
            width = rng.uniform(0.08, 0.2)
            amp = rng.uniform(-0.35, 0.35, size=3)
            blob = np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2)
                          / (2.0 * width * width))
            img += amp[:, None, None] * blob
        cy, cx = rng.uniform(0.3, 0.7, size=2)
        radius = rng.uniform(0.15, 0.3)
        dist = np.sqrt((ys - cy) ** 2 + (xs - cx) ** 2)
        disk = 1.0 / (1.0 + np.exp((dist - radius) / 0.02))
        amp = rng.uniform(-0.3, 0.3, size=3)
        img += amp[:, None, None] * disk
        images.append(np.clip(img, 0.02, 0.98))
    return images


def make_pairs(hr_images: list[np.ndarray], scale: int, seed: int = 0
               ) -> list[tuple[np.ndarray, np.ndarray]]:
    """Degrade each HR image to its LR counterpart and shuffle the
    presentation order (the degradation itself is deterministic)."""
    pairs = []
    for hr in hr_images:
        hr = np.asarray(hr, dtype=np.float64)
        pairs.append((bicubic_downsample(hr, scale), hr))
    np.random.default_rng(seed).shuffle(pairs)
    return pairs
