"""Pinhole camera, rigid transforms, depth rasters and bilinear sampling.

Conventions shared by every module:

* rasters are row-major, origin top-left, ``x`` to the right, ``y`` down;
* integer coordinate ``(x, y)`` is the *center* of pixel ``(x, y)``, so a
  raster of width ``W`` covers the continuous range ``[0, W - 1]``;
* pixel coordinates are stored ``(..., 2)`` as ``(x, y)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidDepthError, NonProjectableError, ShapeMismatchError, ValidationError

ORTHO_TOL = 1e-9
REPAIR_TOL = 1e-6


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (np.isfinite(self.fx) and self.fx > 0):
            raise ValidationError("fx", f"focal length must be positive, got {self.fx}")
        if not (np.isfinite(self.fy) and self.fy > 0):
            raise ValidationError("fy", f"focal length must be positive, got {self.fy}")
        for name in ("cx", "cy"):
            if not np.isfinite(getattr(self, name)):
                raise ValidationError(name, "principal point must be finite")
        if int(self.width) != self.width or self.width < 2:
            raise ValidationError("width", f"expected integer >= 2, got {self.width}")
        if int(self.height) != self.height or self.height < 2:
            raise ValidationError("height", f"expected integer >= 2, got {self.height}")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def inverse(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


def _orthonormal_error(r: np.ndarray) -> float:
    return float(max(np.abs(r.T @ r - np.eye(3)).max(), abs(np.linalg.det(r) - 1.0)))


@dataclass(frozen=True)
class RigidTransform:
    """Maps points of the source camera frame into the target camera frame.

    Rotations within ``1e-6`` of orthonormal are snapped onto SO(3) by polar
    decomposition; anything further off (or a reflection) is rejected.
    """

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64)
        t = np.array(self.translation, dtype=np.float64).reshape(-1)
        if r.shape != (3, 3):
            raise ValidationError("rotation", f"expected 3x3, got {r.shape}")
        if t.shape != (3,):
            raise ValidationError("translation", f"expected 3-vector, got {t.shape}")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValidationError("rotation", "non-finite entries")
        if np.linalg.det(r) <= 0:
            raise ValidationError("rotation", "determinant is not positive (reflection)")
        err = _orthonormal_error(r)
        if err > REPAIR_TOL:
            raise ValidationError("rotation", f"not a rotation (orthonormality error {err:.3g})")
        if err > ORTHO_TOL:
            u, _, vt = np.linalg.svd(r)
            r = u @ vt
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def compose(self, first: "RigidTransform") -> "RigidTransform":
        """Return ``self ∘ first``: apply ``first``, then ``self``."""
        return RigidTransform(
            self.rotation @ first.rotation,
            self.rotation @ first.translation + self.translation,
        )

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return self.compose(other)


@dataclass
class DepthMap:
    """Depth in meters with a per-pixel validity raster."""

    data: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ShapeMismatchError(f"depth map must be H x W, got {self.data.shape}")
        if self.valid is None:
            self.valid = np.isfinite(self.data) & (self.data > 0)
        else:
            self.valid = np.asarray(self.valid, dtype=bool)
            if self.valid.shape != self.data.shape:
                raise ShapeMismatchError("validity raster shape differs from depth shape")
            self.valid = self.valid & np.isfinite(self.data) & (self.data > 0)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def filled(self, value: float = 0.0) -> np.ndarray:
        return np.where(self.valid, self.data, value)


def as_depth_map(d) -> DepthMap:
    return d if isinstance(d, DepthMap) else DepthMap(d)


def pixel_grid(height: int, width: int) -> np.ndarray:
    """(H, W, 2) array of pixel-center coordinates ``(x, y)``."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    return np.stack([xs, ys], axis=-1)


def project(point, K: CameraIntrinsics) -> np.ndarray:
    """Perspective projection of camera-frame point(s) ``(..., 3)`` to pixels."""
    p = np.asarray(point, dtype=np.float64)
    z = p[..., 2]
    if np.any(~(z > 0)):
        raise NonProjectableError("point(s) with z <= 0 cannot be projected")
    return np.stack([K.fx * p[..., 0] / z + K.cx, K.fy * p[..., 1] / z + K.cy], axis=-1)


def project_points(points: np.ndarray, K: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Projection that reports non-projectable points instead of raising.

    Returns ``(pixels, ok)``; pixels are NaN where ``ok`` is False.
    """
    p = np.asarray(points, dtype=np.float64)
    z = p[..., 2]
    ok = z > 0
    safe_z = np.where(ok, z, 1.0)
    uv = np.stack([K.fx * p[..., 0] / safe_z + K.cx, K.fy * p[..., 1] / safe_z + K.cy], axis=-1)
    uv[~ok] = np.nan
    return uv, ok


def unproject(u, depth, K: CameraIntrinsics) -> np.ndarray:
    """Back-project pixel(s) ``(..., 2)`` at ``depth`` to camera-frame points."""
    u = np.asarray(u, dtype=np.float64)
    d = np.asarray(depth, dtype=np.float64)
    if np.any(~(d > 0)):
        raise InvalidDepthError("depth must be positive")
    x = (u[..., 0] - K.cx) / K.fx
    y = (u[..., 1] - K.cy) / K.fy
    return np.stack([d * x, d * y, d * np.ones_like(x)], axis=-1)


def unproject_depth_map(depth, K: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Unproject every valid pixel; returns ``(points (H, W, 3), valid)``.

    Invalid pixels carry NaN coordinates.
    """
    dm = as_depth_map(depth)
    h, w = dm.shape
    grid = pixel_grid(h, w)
    pts = unproject(grid, np.where(dm.valid, dm.data, 1.0), K)
    pts[~dm.valid] = np.nan
    return pts, dm.valid.copy()


def transform_point(p, T: RigidTransform) -> np.ndarray:
    """``R p + t`` for point(s) ``(..., 3)``."""
    p = np.asarray(p, dtype=np.float64)
    return p @ T.rotation.T + T.translation


def bilinear_sample(raster, x, y) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``raster`` at continuous pixel coordinates.

    ``raster`` is (H, W) or (H, W, C); ``x`` and ``y`` broadcast against each
    other. Returns ``(values, in_bounds)``. A sample is in bounds when its four
    interpolation neighbors all lie in the raster, i.e. ``0 <= x <= W - 1`` and
    ``0 <= y <= H - 1``; the last row/column is reached with weight 1 on the
    lower-right neighbor so exact nodes on the far border stay in bounds.
    Out-of-bounds samples return 0.
    """
    img = np.asarray(raster, dtype=np.float64)
    h, w = img.shape[:2]
    x, y = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
    inb = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    xs = np.where(inb, x, 0.0)
    ys = np.where(inb, y, 0.0)
    x0 = np.minimum(np.floor(xs).astype(np.intp), w - 2)
    y0 = np.minimum(np.floor(ys).astype(np.intp), h - 2)
    fx = xs - x0
    fy = ys - y0
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    v00 = img[y0, x0]
    v01 = img[y0, x0 + 1]
    v10 = img[y0 + 1, x0]
    v11 = img[y0 + 1, x0 + 1]
    top = v00 * (1.0 - fx) + v01 * fx
    bottom = v10 * (1.0 - fx) + v11 * fx
    out = top * (1.0 - fy) + bottom * fy
    mask = inb[..., None] if img.ndim == 3 else inb
    out = np.where(mask, out, 0.0)
    return out, inb


def bilinear_weights(x, y, height: int, width: int):
    """Neighbor indices and weights used by :func:`bilinear_sample`.

    Returns ``(x0, y0, fx, fy, in_bounds)``; needed to scatter gradients back
    through a sampling step.
    """
    x, y = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
    inb = (x >= 0) & (x <= width - 1) & (y >= 0) & (y <= height - 1)
    xs = np.where(inb, x, 0.0)
    ys = np.where(inb, y, 0.0)
    x0 = np.minimum(np.floor(xs).astype(np.intp), width - 2)
    y0 = np.minimum(np.floor(ys).astype(np.intp), height - 2)
    return x0, y0, xs - x0, ys - y0, inb


def check_same_hw(*arrays, names=None):
    shapes = [np.shape(a)[:2] for a in arrays]
    if any(s != shapes[0] for s in shapes):
        label = ", ".join(names) if names else "inputs"
        raise ShapeMismatchError(f"{label} must share H x W, got {shapes}")
