"""Depth-adaptive windowed feature matching.

Each reference pixel gets a square search window whose radius grows with its
normalized hybrid depth. Scaled dot-product scores inside the window go
through a softmax; the maximum probability is the matching confidence and the
probability-weighted mean offset is the flow.

Summation order is fixed (channels in index order, window offsets in
row-major order) so the vectorized path is bitwise reproducible by a naive
per-pixel loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError, IsolatedPixelError, ValidationError
from .geometry import as_depth_map, bilinear_sample, check_same_hw


@dataclass(frozen=True)
class MatchingConfig:
    r_min: int = 1
    r_max: int = 8
    epsilon: float = 1e-6

    def __post_init__(self):
        if int(self.r_min) != self.r_min or int(self.r_max) != self.r_max:
            raise ValidationError("r_min", "radii must be integers")
        if not 0 <= self.r_min <= self.r_max:
            raise ValidationError("r_max", f"need 0 <= r_min <= r_max, got {self.r_min}, {self.r_max}")
        if not self.epsilon > 0:
            raise ValidationError("epsilon", "must be positive")


@dataclass
class MatchingResult:
    flow: np.ndarray  # (H, W, 2) expected displacement
    confidence: np.ndarray  # (H, W) max softmax probability
    radius_map: np.ndarray  # (H, W) int


def normalize_depth(depth, epsilon: float = 1e-6) -> np.ndarray:
    """Min-max normalize valid depths into ``[0, 1)``; invalid pixels map to 0."""
    dm = as_depth_map(depth)
    if not dm.valid.any():
        raise EmptyInputError("depth map has no valid pixel")
    vals = dm.data[dm.valid]
    d_min = vals.min()
    d_max = vals.max()
    out = np.zeros(dm.shape)
    out[dm.valid] = (vals - d_min) / (d_max - d_min + epsilon)
    return out


def adaptive_radius(d_norm, cfg: MatchingConfig):
    """Search radius ``floor(r_min + d_norm (r_max - r_min))``; scalar or array."""
    d = np.asarray(d_norm, dtype=np.float64)
    r = np.floor(cfg.r_min + d * (cfg.r_max - cfg.r_min)).astype(np.int64)
    r = np.clip(r, cfg.r_min, cfg.r_max)
    return int(r) if r.ndim == 0 else r


def full_window(r_max: int) -> np.ndarray:
    """All integer offsets of the ``(2 r_max + 1)^2`` window, row-major, as (K, 2) ``(dx, dy)``."""
    span = np.arange(-r_max, r_max + 1)
    dy, dx = np.meshgrid(span, span, indexing="ij")
    return np.stack([dx.ravel(), dy.ravel()], axis=-1)


def window_offsets(r: int, r_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Pre-generated full window plus the mask of offsets with ``|δ|_inf <= r``."""
    if not 0 <= r <= r_max:
        raise ValidationError("r", f"need 0 <= r <= r_max, got r={r}, r_max={r_max}")
    offsets = full_window(r_max)
    return offsets, np.abs(offsets).max(axis=1) <= r


def _scaled_dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # explicit channel loop pins the summation order
    acc = a[..., 0] * b[..., 0]
    for c in range(1, a.shape[-1]):
        acc = acc + a[..., c] * b[..., c]
    return acc / np.sqrt(a.shape[-1])


def match_scores(fa, fb, u, offsets) -> tuple[np.ndarray, np.ndarray]:
    """Scores of reference pixel ``u`` against ``fb`` at ``u + δ`` for each offset.

    Returns ``(scores, included)``; offsets whose sample leaves the raster are
    excluded and carry a score of ``-inf``.
    """
    fa = np.asarray(fa, dtype=np.float64)
    fb = np.asarray(fb, dtype=np.float64)
    if fa.shape[-1] != fb.shape[-1]:
        raise ValidationError("channels", f"feature maps differ in C: {fa.shape[-1]} vs {fb.shape[-1]}")
    offsets = np.asarray(offsets, dtype=np.float64)
    ux, uy = float(u[0]), float(u[1])
    ref, _ = bilinear_sample(fa, ux, uy)
    samples, inb = bilinear_sample(fb, ux + offsets[:, 0], uy + offsets[:, 1])
    scores = _scaled_dot(np.broadcast_to(ref, samples.shape), samples)
    return np.where(inb, scores, -np.inf), inb


def matching_distribution(scores, offsets, included=None):
    """Softmax over included offsets.

    Returns ``(probabilities, confidence, expected_displacement)``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.float64)
    if included is None:
        included = np.isfinite(scores)
    included = np.asarray(included, dtype=bool)
    if not included.any():
        raise IsolatedPixelError("no admissible offset in the matching window")
    m = scores[included].max()
    e = np.where(included, np.exp(np.where(included, scores, m) - m), 0.0)
    z = 0.0
    for v in e:
        z = z + v
    p = e / z
    disp = np.zeros(2)
    for k in range(len(p)):
        disp = disp + p[k] * offsets[k]
    return p, float(p.max()), disp


def compute_matching(fa, fb, d_hyb, cfg: MatchingConfig | None = None) -> MatchingResult:
    """Dense depth-adaptive matching of ``fa`` (reference) against ``fb`` (target)."""
    cfg = cfg or MatchingConfig()
    fa = np.asarray(fa, dtype=np.float64)
    fb = np.asarray(fb, dtype=np.float64)
    dm = as_depth_map(d_hyb)
    check_same_hw(fa, fb, dm.data, names=("Fa", "Fb", "d_hyb"))
    if fa.shape[-1] != fb.shape[-1]:
        raise ValidationError("channels", f"feature maps differ in C: {fa.shape[-1]} vs {fb.shape[-1]}")
    h, w = dm.shape

    radius = adaptive_radius(normalize_depth(dm, cfg.epsilon), cfg)
    offsets = full_window(cfg.r_max)
    cheb = np.abs(offsets).max(axis=1)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)

    n = len(offsets)
    scores = np.full((n, h, w), -np.inf)
    included = np.zeros((n, h, w), dtype=bool)
    for k, (dx, dy) in enumerate(offsets):
        in_window = cheb[k] <= radius
        if not in_window.any():
            continue
        samples, inb = bilinear_sample(fb, xs + dx, ys + dy)
        inc = in_window & inb
        included[k] = inc
        scores[k] = np.where(inc, _scaled_dot(fa, samples), -np.inf)

    # (0, 0) is always admissible, so no pixel is isolated here
    m = scores.max(axis=0)
    z = np.zeros((h, w))
    e = np.zeros((n, h, w))
    for k in range(n):
        e[k] = np.where(included[k], np.exp(np.where(included[k], scores[k], m) - m), 0.0)
        z = z + e[k]
    flow_x = np.zeros((h, w))
    flow_y = np.zeros((h, w))
    conf = np.zeros((h, w))
    for k in range(n):
        p = e[k] / z
        conf = np.maximum(conf, p)
        flow_x = flow_x + p * float(offsets[k, 0])
        flow_y = flow_y + p * float(offsets[k, 1])
    return MatchingResult(np.stack([flow_x, flow_y], axis=-1), conf, radius)

