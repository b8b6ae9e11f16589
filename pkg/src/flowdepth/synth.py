"""Synthetic two-view scenes with analytic depth, flow and visibility.

Scenes are built from fronto-parallel planar surfaces (an unbounded background
plus an optional rectangle in front of it) seen by two pinhole cameras. Every
ground-truth quantity comes from ray casting against these surfaces, never
from the code under test.

Textures (colors and feature descriptors) are sums of random-phase sinusoids
defined on each surface, so both cameras observe identical values for the
same 3D point.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateSceneError, ValidationError
from .geometry import (
    CameraIntrinsics,
    DepthMap,
    RigidTransform,
    bilinear_sample,
    pixel_grid,
    project_points,
    transform_point,
)
from .occlusion import warp_coordinates

N_SINUSOIDS = 8
Z_TOL = 1e-6


@dataclass(frozen=True)
class SceneConfig:
    width: int = 64
    height: int = 64
    focal: float = 100.0
    depth: float = 2.0  # background plane, meters
    baseline: float = 0.1  # view 2 sits this far to the right of view 1
    channels: int = 8
    min_frequency: float = 0.04  # cycles/px as seen from view 1
    max_frequency: float = 0.15
    feature_scale: float = 5.0  # descriptor norm is feature_scale * sqrt(channels)
    seed: int = 0
    # foreground rectangle, in view-1 pixels; zero half-size disables it
    fg_depth: float = 1.25
    fg_center: tuple[float, float] = (32.0, 32.0)
    fg_half_size: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.baseline < 0:
            raise ValidationError("baseline", "must be >= 0")
        if not self.depth > 0:
            raise ValidationError("depth", "must be positive")
        if self.channels < 1:
            raise ValidationError("channels", "need at least one channel")
        if not 0 < self.min_frequency <= self.max_frequency:
            raise ValidationError("max_frequency", "need 0 < min_frequency <= max_frequency")

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(
            self.focal, self.focal, (self.width - 1) / 2.0, (self.height - 1) / 2.0, self.width, self.height
        )

    @property
    def has_foreground(self) -> bool:
        return self.fg_half_size[0] > 0 and self.fg_half_size[1] > 0


def plane_config(**kw) -> SceneConfig:
    return SceneConfig(**kw)


def occluder_config(**kw) -> SceneConfig:
    kw.setdefault("depth", 2.5)
    kw.setdefault("fg_half_size", (10.0, 10.0))
    return SceneConfig(**kw)


@dataclass
class Texture:
    """Per-channel sum of sinusoids over plane coordinates (meters)."""

    freqs: np.ndarray  # (C, N, 2) cycles per meter
    phases: np.ndarray  # (C, N)
    amps: np.ndarray  # (C, N)
    offset: np.ndarray  # (C,)

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        arg = self.freqs[..., 0] * x[..., None, None] + self.freqs[..., 1] * y[..., None, None]
        waves = self.amps * np.cos(2.0 * np.pi * arg + self.phases)
        return waves.sum(axis=-1) + self.offset


def _random_texture(rng, channels, meters_per_px, fmin, fmax, kind: str) -> Texture:
    mag = rng.uniform(fmin, fmax, (channels, N_SINUSOIDS)) / meters_per_px
    angle = rng.uniform(0.0, 2.0 * np.pi, (channels, N_SINUSOIDS))
    freqs = np.stack([mag * np.cos(angle), mag * np.sin(angle)], axis=-1)
    phases = rng.uniform(0.0, 2.0 * np.pi, (channels, N_SINUSOIDS))
    raw = rng.uniform(0.5, 1.0, (channels, N_SINUSOIDS))
    if kind == "color":
        # |sum| <= 0.45 keeps colors inside [0.05, 0.95]
        amps = 0.45 * raw / raw.sum(axis=1, keepdims=True)
        offset = np.full(channels, 0.5)
    else:
        amps = raw * np.sqrt(2.0 / np.sum(raw * raw, axis=1, keepdims=True))
        offset = np.zeros(channels)
    return Texture(freqs, phases, amps, offset)


@dataclass
class Surface:
    z: float
    x_range: tuple[float, float] | None  # None = unbounded
    y_range: tuple[float, float] | None
    color: Texture
    feature: Texture


@dataclass
class SyntheticScene:
    images: tuple[np.ndarray, np.ndarray]
    features: tuple[np.ndarray, np.ndarray]
    depth_gt: tuple[DepthMap, DepthMap]
    K: CameraIntrinsics
    T_12: RigidTransform
    flow_gt: np.ndarray  # view 1 -> view 2
    flow_bwd_gt: np.ndarray  # view 2 -> view 1
    occlusion_gt: np.ndarray  # 1 = view-1 pixel visible in view 2
    seed: int
    config: SceneConfig = field(repr=False, default=None)


def _cast(surfaces, origin: np.ndarray, dirs: np.ndarray):
    """Nearest hit along rays ``origin + s * dirs`` (dirs with unit view-z).

    Returns ``(s, surface_index)``; ``s`` equals depth in the casting camera.
    Missed rays get ``s = inf`` and index -1.
    """
    best = np.full(dirs.shape[:-1], np.inf)
    idx = np.full(dirs.shape[:-1], -1)
    dz = dirs[..., 2]
    for i, surf in enumerate(surfaces):
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (surf.z - origin[2]) / dz
        px = origin[0] + s * dirs[..., 0]
        py = origin[1] + s * dirs[..., 1]
        hit = (dz > 0) & (s > 0)
        if surf.x_range is not None:
            hit &= (px >= surf.x_range[0]) & (px <= surf.x_range[1])
        if surf.y_range is not None:
            hit &= (py >= surf.y_range[0]) & (py <= surf.y_range[1])
        closer = hit & (s < best)
        best = np.where(closer, s, best)
        idx = np.where(closer, i, idx)
    return best, idx


def _shade(surfaces, origin, dirs, s, idx, channels):
    h, w = s.shape
    img = np.zeros((h, w, 3))
    feat = np.zeros((h, w, channels))
    pts = origin + s[..., None] * dirs
    for i, surf in enumerate(surfaces):
        sel = idx == i
        if sel.any():
            img[sel] = surf.color(pts[sel][:, 0], pts[sel][:, 1])
            f = surf.feature(pts[sel][:, 0], pts[sel][:, 1])
            # constant descriptor norm: dot-product matching then peaks at the true match
            feat[sel] = f * np.sqrt(channels) / np.linalg.norm(f, axis=-1, keepdims=True)
    return img, feat


def _camera_rays(K: CameraIntrinsics, T_to_cam: RigidTransform, pixels: np.ndarray):
    """Origin and per-pixel directions (scene = view-1 frame) for a camera.

    ``T_to_cam`` maps view-1 coordinates into the camera. Directions are
    scaled so that their z-component in the camera frame is 1.
    """
    local = np.stack(
        [(pixels[..., 0] - K.cx) / K.fx, (pixels[..., 1] - K.cy) / K.fy, np.ones(pixels.shape[:-1])], axis=-1
    )
    rt = T_to_cam.rotation.T
    origin = -rt @ T_to_cam.translation
    return origin, local @ rt.T


def _flow_and_visibility(surfaces, K, T_src_to_dst, s_src, idx_src, pixels):
    """Flow from the source view into the destination view plus analytic visibility."""
    h, w = s_src.shape
    valid = idx_src >= 0
    origin, dirs = _camera_rays(K, RigidTransform.identity(), pixels)
    pts_src = origin + np.where(valid, s_src, 1.0)[..., None] * dirs
    pts_dst = transform_point(pts_src, T_src_to_dst)
    uv, ok = project_points(pts_dst, K)
    # difference of two projections of the same point: exactly 0 when the views coincide
    uv_src, _ = project_points(pts_src, K)
    ok &= valid
    flow = np.where(ok[..., None], uv - uv_src, 0.0)
    in_frame = ok & (uv[..., 0] >= 0) & (uv[..., 0] <= w - 1) & (uv[..., 1] >= 0) & (uv[..., 1] <= h - 1)
    return flow, pts_dst, uv, in_frame


def _build(cfg: SceneConfig) -> SyntheticScene:
    rng = np.random.default_rng(cfg.seed)
    K = cfg.intrinsics
    T = RigidTransform(np.eye(3), np.array([-cfg.baseline, 0.0, 0.0]))

    surfaces = [
        Surface(
            cfg.depth,
            None,
            None,
            _random_texture(rng, 3, cfg.depth / cfg.focal, cfg.min_frequency, cfg.max_frequency, "color"),
            _random_texture(rng, cfg.channels, cfg.depth / cfg.focal, cfg.min_frequency, cfg.max_frequency, "feature"),
        )
    ]
    if cfg.has_foreground:
        if not cfg.fg_depth < cfg.depth:
            raise ValidationError("fg_depth", "foreground must be nearer than the background")
        z = cfg.fg_depth
        (ccx, ccy), (hx, hy) = cfg.fg_center, cfg.fg_half_size
        x_range = ((ccx - hx - K.cx) / K.fx * z, (ccx + hx - K.cx) / K.fx * z)
        y_range = ((ccy - hy - K.cy) / K.fy * z, (ccy + hy - K.cy) / K.fy * z)
        if ccx - hx <= 0 and ccx + hx >= cfg.width - 1 and ccy - hy <= 0 and ccy + hy >= cfg.height - 1:
            raise DegenerateSceneError("foreground rectangle covers the whole frame")
        surfaces.append(
            Surface(
                z,
                x_range,
                y_range,
                _random_texture(rng, 3, z / cfg.focal, cfg.min_frequency, cfg.max_frequency, "color"),
                _random_texture(rng, cfg.channels, z / cfg.focal, cfg.min_frequency, cfg.max_frequency, "feature"),
            )
        )

    pixels = pixel_grid(cfg.height, cfg.width)
    views = []
    for T_cam in (RigidTransform.identity(), T):
        origin, dirs = _camera_rays(K, T_cam, pixels)
        s, idx = _cast(surfaces, origin, dirs)
        img, feat = _shade(surfaces, origin, dirs, s, idx, cfg.channels)
        views.append((origin, dirs, s, idx, img, feat * cfg.feature_scale))

    # forward flow and visibility of view-1 pixels in view 2
    _, _, s1, idx1, img1, feat1 = views[0]
    o2, _, s2, idx2, img2, feat2 = views[1]
    flow_fwd, pts_in_2, uv2, in_frame = _flow_and_visibility(surfaces, K, T, s1, idx1, pixels)
    origin2, dirs2 = _camera_rays(K, T, np.where(in_frame[..., None], uv2, 0.0))
    s_block, _ = _cast(surfaces, origin2, dirs2)
    visible = in_frame & (pts_in_2[..., 2] <= s_block + Z_TOL)

    # backward flow: view-2 pixels into view 1, expressed through view-2's own frame
    pts2_view1 = o2 + np.where(idx2 >= 0, s2, 1.0)[..., None] * views[1][1]
    uv1, ok1 = project_points(pts2_view1, K)
    flow_bwd = np.where((ok1 & (idx2 >= 0))[..., None], uv1 - pixels, 0.0)

    def depth(s, idx):
        return DepthMap(np.where(idx >= 0, s, 0.0), idx >= 0)

    return SyntheticScene(
        images=(img1, img2),
        features=(feat1, feat2),
        depth_gt=(depth(s1, idx1), depth(s2, idx2)),
        K=K,
        T_12=T,
        flow_gt=flow_fwd,
        flow_bwd_gt=flow_bwd,
        occlusion_gt=visible.astype(np.uint8),
        seed=cfg.seed,
        config=cfg,
    )


def make_plane_scene(cfg: SceneConfig | None = None, **kw) -> SyntheticScene:
    """Single textured fronto-parallel plane; lateral baseline gives flow ``-f b / z``."""
    cfg = replace(cfg, **kw) if cfg is not None else plane_config(**kw)
    return _build(replace(cfg, fg_half_size=(0.0, 0.0)))


def make_occluder_scene(cfg: SceneConfig | None = None, **kw) -> SyntheticScene:
    """Background plane plus a nearer rectangle; visibility by two-view z-test."""
    cfg = replace(cfg, **kw) if cfg is not None else occluder_config(**kw)
    if cfg.has_foreground and not cfg.fg_depth < cfg.depth:
        raise ValidationError("fg_depth", "foreground must be nearer than the background")
    return _build(cfg)


def structured_hybrid_depth(depth_gt: DepthMap, amplitude: float = 0.1, seed: int = 0) -> DepthMap:
    """Ground truth with a smooth multiplicative error ``d (1 + amplitude * e(u))``, ``|e| <= 1``."""
    rng = np.random.default_rng(seed)
    h, w = depth_gt.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    e = np.zeros((h, w))
    weights = rng.uniform(0.5, 1.0, 3)
    weights /= weights.sum()
    for wgt in weights:
        f = rng.uniform(0.005, 0.03, 2)
        phase = rng.uniform(0, 2 * np.pi)
        e += wgt * np.cos(2 * np.pi * (f[0] * xs + f[1] * ys) + phase)
    bias = rng.uniform(-0.5, 0.5)
    e = np.clip(0.5 * e + bias, -1.0, 1.0)
    return DepthMap(np.where(depth_gt.valid, depth_gt.data * (1.0 + amplitude * e), 0.0), depth_gt.valid)


# -- baseline occlusion masks ----------------------------------------------


def baseline_fb_consistency_mask(flow_fwd, flow_bwd, alpha1: float = 0.01, alpha2: float = 0.5) -> np.ndarray:
    """Forward-backward consistency check; 1 = consistent (visible).

    Pixels whose forward target leaves the frame are marked 0.
    """
    flow_fwd = np.asarray(flow_fwd, dtype=np.float64)
    flow_bwd = np.asarray(flow_bwd, dtype=np.float64)
    h, w = flow_fwd.shape[:2]
    grid = pixel_grid(h, w)
    target = grid + flow_fwd
    back, inb = bilinear_sample(flow_bwd, target[..., 0], target[..., 1])
    err = np.sum((flow_fwd + back) ** 2, axis=-1)
    bound = alpha1 * (np.sum(flow_fwd**2, axis=-1) + np.sum(back**2, axis=-1)) + alpha2
    return ((err < bound) & inb).astype(np.uint8)


def baseline_depthflow_mask(d, K: CameraIntrinsics, T: RigidTransform, flow, threshold: float = 1.0) -> np.ndarray:
    """Compare a flow field with the rigid flow induced by depth and pose.

    Pixels are occluded (0) when the two disagree by more than ``threshold``
    pixels, or when the rigid flow is undefined (invalid depth, point behind
    the target camera).
    """
    flow = np.asarray(flow, dtype=np.float64)
    uv, ok = warp_coordinates(d, K, T)
    h, w = flow.shape[:2]
    rigid = uv - pixel_grid(h, w)
    disc = np.sqrt(np.sum((np.where(ok[..., None], rigid, 0.0) - flow) ** 2, axis=-1))
    return (ok & (disc <= threshold)).astype(np.uint8)
