"""File formats: PFM, binary PPM (P6), camera text files, refiner parameter
streams, ``key=value`` blocks and ``x y z`` point lists.

PFM rows are stored bottom-to-top; readers and writers flip them so arrays in
memory always have the top-left origin.
"""

from __future__ import annotations

import math
import re
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .fusion import ResidualRefiner
from .geometry import CameraIntrinsics, RigidTransform

_TOKEN = re.compile(rb"\S+")


def _header_tokens(buf: bytes, count: int, start: int = 0, comments: bool = False):
    """Read ``count`` whitespace-separated tokens; return them and the offset
    just past the single whitespace byte that ends the last one."""
    tokens = []
    pos = start
    while len(tokens) < count:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if comments and buf[pos : pos + 1] == b"#":
            end = buf.find(b"\n", pos)
            pos = len(buf) if end < 0 else end + 1
            continue
        m = _TOKEN.match(buf, pos)
        if m is None:
            raise FormatError("truncated header", pos)
        tokens.append((m.group(), m.start()))
        pos = m.end()
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise FormatError("header not terminated by whitespace", pos)
    return tokens, pos + 1


# -- PFM ------------------------------------------------------------------


def write_pfm(path, raster) -> None:
    """Write an (H, W) or (H, W, 3) raster as little-endian PFM."""
    data = np.asarray(raster)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[..., 0]
    if data.ndim == 2:
        kind = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        kind = b"PF"
    else:
        raise FormatError(f"PFM stores 1 or 3 channels, got shape {data.shape}")
    data = data.astype("<f4")
    h, w = data.shape[:2]
    header = b"%s\n%d %d\n-1.0\n" % (kind, w, h)
    if not np.all(np.isfinite(data)):
        bad = int(np.flatnonzero(~np.isfinite(np.flipud(data).ravel()))[0])
        raise FormatError("non-finite value cannot be written to PFM", len(header) + 4 * bad)
    Path(path).write_bytes(header + np.ascontiguousarray(np.flipud(data)).tobytes())


def parse_pfm(buf: bytes) -> np.ndarray:
    tokens, offset = _header_tokens(buf, 4)
    (kind, _), (w_tok, w_at), (h_tok, h_at), (s_tok, s_at) = tokens
    if kind == b"Pf":
        channels = 1
    elif kind == b"PF":
        channels = 3
    else:
        raise FormatError(f"bad PFM magic {kind!r}", 0)
    try:
        w = int(w_tok)
    except ValueError:
        raise FormatError("bad PFM width", w_at) from None
    try:
        h = int(h_tok)
    except ValueError:
        raise FormatError("bad PFM height", h_at) from None
    if w <= 0 or h <= 0:
        raise FormatError("PFM dimensions must be positive", w_at)
    try:
        scale = float(s_tok)
    except ValueError:
        raise FormatError("bad PFM scale", s_at) from None
    if scale == 0 or not math.isfinite(scale):
        raise FormatError("PFM scale must be non-zero", s_at)
    dtype = "<f4" if scale < 0 else ">f4"
    n = w * h * channels
    payload = buf[offset:]
    if len(payload) < 4 * n:
        raise FormatError(f"truncated PFM payload: need {4 * n} bytes, have {len(payload)}", len(buf))
    data = np.frombuffer(payload, dtype=dtype, count=n).astype(np.float32)
    shape = (h, w) if channels == 1 else (h, w, 3)
    return np.flipud(data.reshape(shape)).copy()


def read_pfm(path) -> np.ndarray:
    """Read a PFM file as float32, top-left origin."""
    return parse_pfm(Path(path).read_bytes())


def write_feature_pfm(path, features) -> None:
    """Store an (H, W, C) feature raster as a single-channel PFM of height ``C * H``
    (channel planes stacked top to bottom)."""
    f = np.asarray(features)
    if f.ndim == 2:
        f = f[..., None]
    write_pfm(path, np.concatenate([f[..., c] for c in range(f.shape[2])], axis=0))


def read_feature_pfm(path, height: int) -> np.ndarray:
    stacked = read_pfm(path)
    if stacked.ndim != 2 or stacked.shape[0] % height:
        raise FormatError(f"feature PFM height {stacked.shape[0]} is not a multiple of {height}")
    c = stacked.shape[0] // height
    return np.stack([stacked[i * height : (i + 1) * height] for i in range(c)], axis=-1)


def write_flow_pfm(path, flow) -> None:
    """Flow (H, W, 2) as a 3-channel PFM with a zero third channel."""
    f = np.asarray(flow)
    write_pfm(path, np.concatenate([f, np.zeros(f.shape[:2] + (1,))], axis=-1))


def read_flow_pfm(path) -> np.ndarray:
    data = read_pfm(path)
    if data.ndim != 3:
        raise FormatError("flow PFM must have 3 channels")
    return data[..., :2]


# -- PPM ------------------------------------------------------------------


def quantize(image) -> np.ndarray:
    """[0, 1] floats to bytes, rounding half up."""
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.floor(img * 255.0 + 0.5).astype(np.uint8)


def write_ppm(path, image) -> None:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise FormatError(f"PPM needs an H x W x 3 image, got {img.shape}")
    data = img if img.dtype == np.uint8 else quantize(img)
    h, w = data.shape[:2]
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + data.tobytes())


def parse_ppm_bytes(buf: bytes) -> np.ndarray:
    tokens, offset = _header_tokens(buf, 4, comments=True)
    (magic, _), (w_tok, w_at), (h_tok, h_at), (mx_tok, mx_at) = tokens
    if magic != b"P6":
        raise FormatError(f"bad PPM magic {magic!r}", 0)
    try:
        w, h, maxval = int(w_tok), int(h_tok), int(mx_tok)
    except ValueError:
        raise FormatError("non-integer PPM header field", w_at) from None
    if w <= 0 or h <= 0:
        raise FormatError("PPM dimensions must be positive", w_at)
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}", mx_at)
    n = w * h * 3
    if len(buf) - offset < n:
        raise FormatError("truncated PPM payload", len(buf))
    return np.frombuffer(buf, dtype=np.uint8, count=n, offset=offset).reshape(h, w, 3).copy()


def read_ppm_bytes(path) -> np.ndarray:
    return parse_ppm_bytes(Path(path).read_bytes())


def read_ppm(path) -> np.ndarray:
    """Read a P6 image as float64 in [0, 1]."""
    return read_ppm_bytes(path).astype(np.float64) / 255.0


# -- camera file ----------------------------------------------------------


def parse_camera(text: str) -> tuple[CameraIntrinsics, RigidTransform]:
    """``fx fy cx cy w h`` followed by the 3x4 row-major ``[R | t]``.

    Blank lines and ``#`` comments are ignored.
    """
    rows = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            rows.append(line.split())
    if len(rows) != 4:
        raise ValidationError("camera", f"expected 4 data lines, got {len(rows)}")
    if len(rows[0]) != 6:
        raise ValidationError("intrinsics", f"expected 6 values, got {len(rows[0])}")
    try:
        fx, fy, cx, cy = (float(v) for v in rows[0][:4])
        w_f, h_f = float(rows[0][4]), float(rows[0][5])
        pose = np.array([[float(v) for v in r] for r in rows[1:]])
    except ValueError as exc:
        raise ValidationError("camera", f"non-numeric entry ({exc})") from None
    if pose.shape != (3, 4):
        raise ValidationError("pose", f"expected 3 rows of 4 values, got {pose.shape}")
    K = CameraIntrinsics(fx, fy, cx, cy, w_f, h_f)
    return K, RigidTransform(pose[:, :3], pose[:, 3])


def read_camera(path) -> tuple[CameraIntrinsics, RigidTransform]:
    return parse_camera(Path(path).read_text())


def format_camera(K: CameraIntrinsics, T: RigidTransform) -> str:
    lines = [" ".join(repr(float(v)) for v in (K.fx, K.fy, K.cx, K.cy)) + f" {K.width} {K.height}"]
    for i in range(3):
        lines.append(" ".join(repr(float(v)) for v in (*T.rotation[i], T.translation[i])))
    return "\n".join(lines) + "\n"


def write_camera(path, K: CameraIntrinsics, T: RigidTransform) -> None:
    Path(path).write_text(format_camera(K, T))


# -- refiner parameters ---------------------------------------------------

_REFINER_ORDER = ("conv1_weights", "conv1_bias", "conv2_weights", "conv2_bias")


def refiner_to_bytes(refiner: ResidualRefiner) -> bytes:
    """Header ``refiner v1 <Hc>`` then every parameter as little-endian float32,
    in the order conv1 weights (ky, kx, in, out), conv1 bias, conv2 weights,
    conv2 bias."""
    params = refiner.parameters()
    body = np.concatenate([params[k].ravel() for k in _REFINER_ORDER]).astype("<f4")
    if not np.all(np.isfinite(body)):
        raise FormatError("refiner parameters must be finite")
    return b"refiner v1 %d\n" % refiner.hidden_channels + body.tobytes()


def refiner_from_bytes(buf: bytes) -> ResidualRefiner:
    nl = buf.find(b"\n")
    if nl < 0:
        raise FormatError("missing refiner header line", 0)
    parts = buf[:nl].split()
    if len(parts) != 3 or parts[0] != b"refiner" or parts[1] != b"v1":
        raise FormatError(f"bad refiner header {buf[:nl]!r}", 0)
    try:
        hc = int(parts[2])
    except ValueError:
        raise FormatError("bad hidden channel count", 0) from None
    if hc < 1:
        raise FormatError("hidden channel count must be >= 1", 0)
    shapes = [(3, 3, 3, hc), (hc,), (3, 3, hc, 1), (1,)]
    sizes = [int(np.prod(s)) for s in shapes]
    payload = buf[nl + 1 :]
    if len(payload) != 4 * sum(sizes):
        raise FormatError(f"refiner payload must be {4 * sum(sizes)} bytes, got {len(payload)}", nl + 1)
    flat = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    parts_out = []
    pos = 0
    for shape, size in zip(shapes, sizes):
        parts_out.append(flat[pos : pos + size].reshape(shape))
        pos += size
    return ResidualRefiner(*parts_out)


def write_refiner(path, refiner: ResidualRefiner) -> None:
    Path(path).write_bytes(refiner_to_bytes(refiner))


def read_refiner(path) -> ResidualRefiner:
    return refiner_from_bytes(Path(path).read_bytes())


# -- text outputs ---------------------------------------------------------


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if math.isnan(v):
        return "nan"
    s = format(v, ".7g")  # float32 inputs carry ~7 significant digits
    if "e" not in s and "." not in s:
        s += ".0"
    return s


def format_kv(values: dict) -> str:
    """Single-line ``key=value`` block, keys in insertion order."""
    return " ".join(f"{k}={format_value(v)}" for k, v in values.items())


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for tok in text.split():
        k, sep, v = tok.partition("=")
        if not sep:
            raise FormatError(f"not a key=value token: {tok!r}")
        out[k] = v
    return out


def write_points(path, points: np.ndarray) -> None:
    """One ``x y z`` line per point (shortest round-trip float repr)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    Path(path).write_text("".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in pts.tolist()))


def read_points(path) -> np.ndarray:
    text = Path(path).read_text().split()
    return np.array([float(v) for v in text]).reshape(-1, 3)
