"""Depth-guided feature warping, the correlation occlusion mask and the flow probability mask."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError, ValidationError
from .geometry import (
    CameraIntrinsics,
    RigidTransform,
    as_depth_map,
    bilinear_sample,
    check_same_hw,
    pixel_grid,
    project_points,
    transform_point,
)


@dataclass(frozen=True)
class OcclusionConfig:
    tau: float = 0.5

    def __post_init__(self):
        if not 0 < self.tau < 1:
            raise ValidationError("tau", f"threshold must lie in (0, 1), got {self.tau}")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def warp_coordinates(d_hyb, K: CameraIntrinsics, T: RigidTransform) -> tuple[np.ndarray, np.ndarray]:
    """Target-view pixel hit by each reference pixel's back-projected point.

    Returns ``(coords (H, W, 2), projectable)``; pixels with invalid depth or
    whose transformed point lies at or behind the target camera are not
    projectable and carry NaN coordinates.
    """
    dm = as_depth_map(d_hyb)
    h, w = dm.shape
    grid = pixel_grid(h, w)
    d = np.where(dm.valid, dm.data, 1.0)
    rays = np.stack(
        [(grid[..., 0] - K.cx) / K.fx, (grid[..., 1] - K.cy) / K.fy, np.ones((h, w))], axis=-1
    )
    pts = transform_point(rays * d[..., None], T)
    uv, ok = project_points(pts, K)
    ok &= dm.valid
    uv[~ok] = np.nan
    return uv, ok


def warp_features(fb, d_hyb, K: CameraIntrinsics, T: RigidTransform) -> tuple[np.ndarray, np.ndarray]:
    """Resample target features ``fb`` into the reference view.

    Returns ``(warped (H, W, C), in_bounds (H, W) uint8)``. Warped values are 0
    wherever ``in_bounds`` is 0.
    """
    fb = np.asarray(fb, dtype=np.float64)
    dm = as_depth_map(d_hyb)
    check_same_hw(fb, dm.data, names=("Fb", "d_hyb"))
    uv, ok = warp_coordinates(dm, K, T)
    x = np.where(ok, uv[..., 0], -1.0)
    y = np.where(ok, uv[..., 1], -1.0)
    warped, inb = bilinear_sample(fb, x, y)
    inb &= ok
    warped[~inb] = 0.0
    return warped, inb.astype(np.uint8)


def correlation_scores(fa, fb_warped) -> np.ndarray:
    """Per-pixel ``<Fa(u), F̃b(u)> / sqrt(C)``."""
    fa = np.asarray(fa, dtype=np.float64)
    fb_warped = np.asarray(fb_warped, dtype=np.float64)
    if fa.shape != fb_warped.shape:
        raise ShapeMismatchError(f"feature shapes differ: {fa.shape} vs {fb_warped.shape}")
    return np.einsum("hwc,hwc->hw", fa, fb_warped) / np.sqrt(fa.shape[-1])


def occlusion_mask(fa, fb_warped, in_bounds, cfg: OcclusionConfig | None = None) -> np.ndarray:
    """Binary visibility mask: 1 iff in bounds and sigmoid(score) > tau (strictly)."""
    cfg = cfg or OcclusionConfig()
    in_bounds = np.asarray(in_bounds)
    check_same_hw(fa, fb_warped, in_bounds, names=("Fa", "F̃b", "in_bounds"))
    visible = _sigmoid(correlation_scores(fa, fb_warped)) > cfg.tau
    return (visible & (in_bounds != 0)).astype(np.uint8)


def flow_probability_mask(m_occ, f_c) -> np.ndarray:
    """Elementwise ``M_occ * f_c``."""
    m_occ = np.asarray(m_occ, dtype=np.float64)
    f_c = np.asarray(f_c, dtype=np.float64)
    if m_occ.shape != f_c.shape:
        raise ShapeMismatchError(f"mask shapes differ: {m_occ.shape} vs {f_c.shape}")
    return m_occ * f_c
