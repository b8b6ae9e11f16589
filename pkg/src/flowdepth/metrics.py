"""Image and depth evaluation metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyOverlapError, ShapeMismatchError, SizeError
from .geometry import as_depth_map

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
DELTA1_THRESHOLD = 1.25


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"psnr inputs differ in shape: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_kernel(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _filter_valid(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    # separable correlation, 'valid' region only
    n = len(k)
    h, w = img.shape
    rows = sum(k[i] * img[i : h - n + 1 + i, :] for i in range(n))
    return sum(k[j] * rows[:, j : w - n + 1 + j] for j in range(n))


def ssim(a, b, peak: float = 1.0) -> float:
    """Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5).

    The SSIM map is evaluated where the window fits entirely inside the image
    and averaged over channels, then pixels.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"ssim inputs differ in shape: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise SizeError(f"ssim needs H, W >= {SSIM_WINDOW}, got {a.shape[:2]}")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    k = _gaussian_kernel()
    maps = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx, my = _filter_valid(x, k), _filter_valid(y, k)
        sxx = _filter_valid(x * x, k) - mx * mx
        syy = _filter_valid(y * y, k) - my * my
        sxy = _filter_valid(x * y, k) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        maps.append(num / den)
    return float(np.mean(np.mean(maps, axis=0)))


@dataclass(frozen=True)
class DepthMetricReport:
    abs_rel: float
    delta1: float
    pixel_count: int


def depth_metrics(pred, gt) -> DepthMetricReport:
    """Abs Rel and δ1 (strict ``< 1.25``) over jointly valid pixels."""
    p = as_depth_map(pred)
    g = as_depth_map(gt)
    if p.shape != g.shape:
        raise ShapeMismatchError(f"depth shapes differ: {p.shape} vs {g.shape}")
    both = p.valid & g.valid
    n = int(both.sum())
    if n == 0:
        raise EmptyOverlapError("prediction and ground truth share no valid pixel")
    dp = p.data[both]
    dg = g.data[both]
    abs_rel = float(np.mean(np.abs(dp - dg) / dg))
    # max(dp/dg, dg/dp) < t, written without division so pred = t*gt lands exactly on the boundary
    inside = (dp < DELTA1_THRESHOLD * dg) & (dg < DELTA1_THRESHOLD * dp)
    delta1 = float(np.mean(inside))
    return DepthMetricReport(abs_rel, delta1, n)
