"""Per-pixel depth from optical flow and relative pose.

For reference pixel ``u`` matched to ``u'`` in the target view, the
transformed ray ``K (R d K^-1 u + t)`` must be parallel to ``u'``. Writing
``a = u' x (K R K^-1 u)`` and ``b = u' x (K t)``, the residual is ``a d + b``
and its least-squares minimizer is ``d* = -(a . b) / (a . a)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .geometry import CameraIntrinsics, DepthMap, RigidTransform, pixel_grid


@dataclass(frozen=True)
class TriangulationConfig:
    min_denominator: float = 1e-12
    min_depth: float = 0.1
    max_depth: float = 500.0

    def __post_init__(self):
        if not self.min_denominator > 0:
            raise ValidationError("min_denominator", "must be positive")
        if not 0 < self.min_depth < self.max_depth:
            raise ValidationError("min_depth", "need 0 < min_depth < max_depth")


def _solve(u, flow, K: CameraIntrinsics, T: RigidTransform, cfg: TriangulationConfig):
    u = np.asarray(u, dtype=np.float64)
    flow = np.asarray(flow, dtype=np.float64)
    ones = np.ones(u.shape[:-1] + (1,))
    u_h = np.concatenate([u, ones], axis=-1)
    u2_h = np.concatenate([u + flow, ones], axis=-1)
    km = K.matrix
    homography = km @ T.rotation @ K.inverse
    a = np.cross(u2_h, u_h @ homography.T)
    b = np.cross(u2_h, np.broadcast_to(km @ T.translation, u2_h.shape))
    aa = np.einsum("...i,...i->...", a, a)
    ab = np.einsum("...i,...i->...", a, b)
    # threshold in units independent of the focal length
    scale = np.sum(km * km)
    ok = aa / scale >= cfg.min_denominator
    d = -ab / np.where(ok, aa, 1.0)
    ok &= (d >= cfg.min_depth) & (d <= cfg.max_depth)
    return np.where(ok, d, 0.0), ok


def triangulate_pixel(u, flow, K: CameraIntrinsics, T: RigidTransform, cfg: TriangulationConfig | None = None):
    """Depth of pixel ``u`` given its flow; returns ``(depth, valid)``.

    Degenerate geometry (tiny ``|a|``, zero baseline, out-of-range depth) is
    reported through ``valid``; the returned depth is then 0.
    """
    d, ok = _solve(u, flow, K, T, cfg or TriangulationConfig())
    return float(d), bool(ok)


def flow_depth_map(flow, K: CameraIntrinsics, T: RigidTransform, cfg: TriangulationConfig | None = None) -> DepthMap:
    """Triangulate every pixel of an (H, W, 2) flow field."""
    flow = np.asarray(flow, dtype=np.float64)
    h, w = flow.shape[:2]
    d, ok = _solve(pixel_grid(h, w), flow, K, T, cfg or TriangulationConfig())
    return DepthMap(d, ok)
