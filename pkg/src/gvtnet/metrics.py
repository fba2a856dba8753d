"""Quality metrics and the 8-transform test-time ensemble.

PSNR runs on whatever channels it is given (RGB by default, luma via
the caller's switch); SSIM always collapses color to BT.601 luminance,
the standard single-channel protocol.  Identical inputs score exactly
1.0 in SSIM: the numerator and denominator are built from bitwise-equal
subexpressions when a == b, so the ratio is exactly one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = ["psnr", "ssim", "to_luma", "crop_border", "dihedral",
           "dihedral_inverse", "self_ensemble", "MetricReport",
           "evaluate_pairs", "PSNR_CAP"]

# Zero-MSE sentinel; keeps reports free of infinities.
PSNR_CAP = 99.0

_BT601 = np.array([0.299, 0.587, 0.114])


def to_luma(img: np.ndarray) -> np.ndarray:
    """[3, H, W] -> [H, W] BT.601 luminance; 2-D input passes through."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    if arr.ndim == 3 and arr.shape[0] == 3:
        return np.einsum("c,chw->hw", _BT601, arr)
    raise ValueError(f"expected [3, H, W] or [H, W], got {arr.shape}")


def crop_border(img: np.ndarray, pixels: int) -> np.ndarray:
    if pixels == 0:
        return img
    if pixels < 0 or 2 * pixels >= min(img.shape[-2], img.shape[-1]):
        raise ValueError(f"cannot crop {pixels} pixels from {img.shape}")
    return img[..., pixels:-pixels, pixels:-pixels]


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shapes differ, {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return PSNR_CAP
    return float(min(10.0 * np.log10(peak * peak / mse), PSNR_CAP))


def _gaussian_window(n: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (n - 1) / 2.0
    coords = np.arange(n) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean local SSIM over valid 11x11 Gaussian windows (sigma 1.5)."""
    ya = to_luma(a)
    yb = to_luma(b)
    if ya.shape != yb.shape:
        raise ValueError(f"ssim: shapes differ, {ya.shape} vs {yb.shape}")
    win = _gaussian_window()
    n = win.shape[0]
    if min(ya.shape) < n:
        raise ValueError(
            f"ssim: image {ya.shape} smaller than the {n}x{n} window")
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2

    wa = sliding_window_view(ya, (n, n))
    wb = sliding_window_view(yb, (n, n))
    mu_a = np.einsum("ijpq,pq->ij", wa, win, optimize=True)
    mu_b = np.einsum("ijpq,pq->ij", wb, win, optimize=True)
    e_aa = np.einsum("ijpq,ijpq,pq->ij", wa, wa, win, optimize=True)
    e_bb = np.einsum("ijpq,ijpq,pq->ij", wb, wb, win, optimize=True)
    e_ab = np.einsum("ijpq,ijpq,pq->ij", wa, wb, win, optimize=True)
    var_a = e_aa - mu_a * mu_a
    var_b = e_bb - mu_b * mu_b
    cov = e_ab - mu_a * mu_b

    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def dihedral(img: np.ndarray, k: int) -> np.ndarray:
    """Apply transform k of the 8 axis-aligned flips/rotations to
    [..., H, W]: k % 4 quarter turns, preceded by a horizontal flip
    when k >= 4."""
    if not 0 <= k < 8:
        raise ValueError(f"dihedral index must be in [0, 8), got {k}")
    out = img[..., ::-1] if k >= 4 else img
    return np.rot90(out, k % 4, axes=(-2, -1))


def dihedral_inverse(img: np.ndarray, k: int) -> np.ndarray:
    out = np.rot90(img, -(k % 4), axes=(-2, -1))
    return out[..., ::-1] if k >= 4 else out


def self_ensemble(predict: Callable[[np.ndarray], np.ndarray],
                  lr_img: np.ndarray) -> np.ndarray:
    """Average the model over all 8 dihedral views of the input."""
    total = None
    for k in range(8):
        out = dihedral_inverse(predict(dihedral(lr_img, k)), k)
        total = out.astype(np.float64) if total is None else total + out
    return total / 8.0


@dataclass
class MetricReport:
    names: list[str] = field(default_factory=list)
    psnr_values: list[float] = field(default_factory=list)
    ssim_values: list[float] = field(default_factory=list)

    def add(self, name: str, psnr_db: float, ssim_val: float) -> None:
        self.names.append(name)
        self.psnr_values.append(psnr_db)
        self.ssim_values.append(ssim_val)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr_values))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim_values))

    def to_csv(self) -> str:
        lines = ["name,psnr,ssim"]
        for name, p, s in zip(self.names, self.psnr_values, self.ssim_values):
            lines.append(f"{name},{p:.6f},{s:.8f}")
        lines.append(f"mean,{self.mean_psnr:.6f},{self.mean_ssim:.8f}")
        return "\n".join(lines) + "\n"

    def table(self) -> str:
        width = max([len(n) for n in self.names] + [4])
        lines = [f"{'name':<{width}}  {'PSNR':>8}  {'SSIM':>8}"]
        for name, p, s in zip(self.names, self.psnr_values, self.ssim_values):
            lines.append(f"{name:<{width}}  {p:8.4f}  {s:8.6f}")
        lines.append(f"{'mean':<{width}}  {self.mean_psnr:8.4f}  "
                     f"{self.mean_ssim:8.6f}")
        return "\n".join(lines)


def evaluate_pairs(predict: Callable[[np.ndarray], np.ndarray],
                   pairs: list[tuple[np.ndarray, np.ndarray]],
                   names: list[str] | None = None,
                   crop: int = 0, y_channel: bool = False,
                   ensemble: bool = False) -> MetricReport:
    """Score a predictor over (lr, hr) pairs.

    ``y_channel`` moves PSNR to BT.601 luma (SSIM is luma regardless);
    ``crop`` trims a border before scoring; ``ensemble`` switches on the
    8-view average.
    """
    report = MetricReport()
    for i, (lr, hr) in enumerate(pairs):
        sr = self_ensemble(predict, lr) if ensemble else predict(lr)
        sr = np.clip(np.asarray(sr, dtype=np.float64), 0.0, 1.0)
        sr_c = crop_border(sr, crop)
        hr_c = crop_border(np.asarray(hr, dtype=np.float64), crop)
        if y_channel:
            p = psnr(to_luma(sr_c), to_luma(hr_c))
        else:
            p = psnr(sr_c, hr_c)
        name = names[i] if names else f"image{i}"
        report.add(name, p, ssim(sr_c, hr_c))
    return report
