"""Self-supervised flow and depth losses with analytic gradients.

Every loss returns a :class:`LossTerm` holding the scalar value and a dict of
gradient rasters keyed by input name.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import EmptyInputError, EmptyMaskError, InvalidTermError, ShapeMismatchError, ValidationError
from .geometry import DepthMap, bilinear_weights, check_same_hw

LUMA = np.array([0.299, 0.587, 0.114])
CENSUS_RADIUS = 3  # 7x7 patch
CENSUS_SOFTSIGN = 0.81
CENSUS_HAMMING = 0.1
CHARBONNIER_EPS = 1e-6
EDGE_WEIGHT = 150.0


class LossTerm(NamedTuple):
    value: float
    grads: dict


@dataclass(frozen=True)
class LossWeights:
    lambda_s1: float = 0.0025
    lambda_s2: float = 0.0025
    lambda_c: float = 0.1
    lambda_g: float = 0.1
    lambda_m: float = 0.1
    lambda_lpips_surrogate: float = 0.05

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not (math.isfinite(value) and value >= 0):
                raise ValidationError(name, f"weight must be finite and >= 0, got {value}")


@dataclass
class LossReport:
    census: float
    smooth1: float
    smooth2: float
    consistency: float
    gcc: float
    rendering: float
    total: float
    gradients: dict = field(default_factory=dict, repr=False)

    def as_dict(self) -> dict[str, float]:
        keys = ("census", "smooth1", "smooth2", "consistency", "gcc", "rendering", "total")
        return {k: getattr(self, k) for k in keys}

    def to_text(self) -> str:
        from .io import format_kv

        return format_kv(self.as_dict())


# -- census ---------------------------------------------------------------


def _gray(img: np.ndarray) -> np.ndarray:
    return img[..., 0] * LUMA[0] + img[..., 1] * LUMA[1] + img[..., 2] * LUMA[2]


def _census_offsets():
    r = CENSUS_RADIUS
    return [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1)]


def census_loss(ia, ib_warped, valid=None) -> LossTerm:
    """Soft census (ternary) loss between ``ia`` and a warped ``ib``.

    Pixels closer than 3 px to the border are dropped since their 7x7 patch
    is incomplete. Gradients are returned for both images.
    """
    ia = np.asarray(ia, dtype=np.float64)
    ib = np.asarray(ib_warped, dtype=np.float64)
    if ia.shape != ib.shape or ia.ndim != 3 or ia.shape[2] != 3:
        raise ShapeMismatchError(f"census needs two H x W x 3 images, got {ia.shape}, {ib.shape}")
    h, w = ia.shape[:2]
    r = CENSUS_RADIUS
    mask = np.ones((h, w), dtype=bool) if valid is None else np.asarray(valid) != 0
    check_same_hw(ia, mask, names=("image", "valid"))
    inner = np.zeros((h, w), dtype=bool)
    inner[r : h - r, r : w - r] = True
    mask = mask & inner
    n = int(mask.sum())
    if n == 0:
        raise EmptyMaskError("census loss has no valid interior pixel")

    ga, gb = _gray(ia), _gray(ib)
    hh, ww = h - 2 * r, w - 2 * r
    m = mask[r : h - r, r : w - r]
    ca, cb = ga[r : h - r, r : w - r], gb[r : h - r, r : w - r]

    hamming = np.zeros((hh, ww))
    cache = []
    for dy, dx in _census_offsets():
        na = ga[r + dy : r + dy + hh, r + dx : r + dx + ww]
        nb = gb[r + dy : r + dy + hh, r + dx : r + dx + ww]
        da, db = na - ca, nb - cb
        qa = CENSUS_SOFTSIGN + da * da
        qb = CENSUS_SOFTSIGN + db * db
        ta, tb = da / np.sqrt(qa), db / np.sqrt(qb)
        diff = ta - tb
        dist = diff * diff
        hamming += dist / (CENSUS_HAMMING + dist)
        cache.append((dy, dx, qa, qb, diff, dist))

    charb = np.sqrt(hamming * hamming + CHARBONNIER_EPS)
    value = float(np.sum(np.where(m, charb, 0.0)) / n)

    g_ham = np.where(m, hamming / charb, 0.0) / n
    g_ga = np.zeros((h, w))
    g_gb = np.zeros((h, w))
    for dy, dx, qa, qb, diff, dist in cache:
        g_dist = g_ham * CENSUS_HAMMING / (CENSUS_HAMMING + dist) ** 2
        g_ta = g_dist * 2.0 * diff
        g_da = g_ta * CENSUS_SOFTSIGN / qa**1.5
        g_db = -g_dist * 2.0 * diff * CENSUS_SOFTSIGN / qb**1.5
        g_ga[r + dy : r + dy + hh, r + dx : r + dx + ww] += g_da
        g_ga[r : h - r, r : w - r] -= g_da
        g_gb[r + dy : r + dy + hh, r + dx : r + dx + ww] += g_db
        g_gb[r : h - r, r : w - r] -= g_db
    grads = {
        "ia": g_ga[..., None] * LUMA,
        "ib_warped": g_gb[..., None] * LUMA,
    }
    return LossTerm(value, grads)


# -- edge-aware smoothness ------------------------------------------------


def smoothness_loss(flow, image, order: int = 1, edge_weight: float = EDGE_WEIGHT) -> LossTerm:
    """Edge-aware smoothness of a flow field.

    Per axis, the L1 norm (over the two flow components) of the forward
    difference of the given order is weighted by
    ``exp(-edge_weight * mean_c |dI|)`` and averaged over the pixels where the
    difference exists; the loss is the mean of the two axis averages.
    Gradient is w.r.t. the flow only.
    """
    flow = np.asarray(flow, dtype=np.float64)
    img = np.asarray(image, dtype=np.float64)
    check_same_hw(flow, img, names=("flow", "image"))
    if order not in (1, 2):
        raise ValidationError("order", f"expected 1 or 2, got {order}")
    h, w = flow.shape[:2]
    if h < 3 or w < 3:
        raise ShapeMismatchError("smoothness needs H, W >= 3")

    grad = np.zeros_like(flow)
    total = 0.0
    for axis in (0, 1):
        f = np.moveaxis(flow, axis, 1)  # differences along axis 1
        im = np.moveaxis(img, axis, 1)
        g = np.moveaxis(grad, axis, 1)  # view into grad
        weight = np.exp(-edge_weight * np.abs(np.diff(im, axis=1)).mean(axis=-1))
        if order == 1:
            d = f[:, 1:] - f[:, :-1]
        else:
            d = f[:, 2:] - 2.0 * f[:, 1:-1] + f[:, :-2]
            weight = weight[:, 1:]
        count = d.shape[0] * d.shape[1]
        total += float(np.sum(np.abs(d) * weight[..., None])) / count
        gd = np.sign(d) * weight[..., None] / (2.0 * count)
        if order == 1:
            g[:, 1:] += gd
            g[:, :-1] -= gd
        else:
            g[:, 2:] += gd
            g[:, 1:-1] -= 2.0 * gd
            g[:, :-2] += gd
    return LossTerm(total / 2.0, {"flow": grad})


# -- multi-view depth consistency -----------------------------------------


def _depth_array(d):
    if isinstance(d, DepthMap):
        return d.data, d.valid
    arr = np.asarray(d, dtype=np.float64)
    return arr, np.ones(arr.shape, dtype=bool)


def multiview_consistency_loss(d_ref, d_tgt, flow, m_flow) -> LossTerm:
    """Mask-weighted ``|d_ref(u) - d_tgt(u + flow(u))|`` averaged over in-bounds samples.

    Out-of-bounds samples (and invalid reference pixels) contribute nothing
    and are left out of the mean's denominator. Gradients are returned for
    ``d_ref``, ``d_tgt``, ``m_flow`` and ``flow``.
    """
    ref, ref_valid = _depth_array(d_ref)
    tgt, _ = _depth_array(d_tgt)
    flow = np.asarray(flow, dtype=np.float64)
    m = np.asarray(m_flow, dtype=np.float64)
    check_same_hw(ref, tgt, flow, m, names=("d_ref", "d_tgt", "flow", "m_flow"))
    h, w = ref.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    x0, y0, fx, fy, inb = bilinear_weights(xs + flow[..., 0], ys + flow[..., 1], h, w)
    inb &= ref_valid
    n = int(inb.sum())
    if n == 0:
        raise EmptyMaskError("every consistency sample left the frame")

    v00, v01 = tgt[y0, x0], tgt[y0, x0 + 1]
    v10, v11 = tgt[y0 + 1, x0], tgt[y0 + 1, x0 + 1]
    top = v00 * (1.0 - fx) + v01 * fx
    bottom = v10 * (1.0 - fx) + v11 * fx
    warped = top * (1.0 - fy) + bottom * fy
    resid = np.where(inb, ref - warped, 0.0)
    value = float(np.sum(np.where(inb, m * np.abs(resid), 0.0)) / n)

    s = np.where(inb, m * np.sign(resid), 0.0) / n
    g_tgt = np.zeros((h, w))
    for dy, dx, wgt in ((0, 0, (1 - fx) * (1 - fy)), (0, 1, fx * (1 - fy)), (1, 0, (1 - fx) * fy), (1, 1, fx * fy)):
        np.add.at(g_tgt, (y0 + dy, x0 + dx), -s * wgt)
    dwx = (v01 - v00) * (1.0 - fy) + (v11 - v10) * fy
    dwy = bottom - top
    grads = {
        "d_ref": s,
        "d_tgt": g_tgt,
        "m_flow": np.where(inb, np.abs(resid), 0.0) / n,
        "flow": np.stack([-s * dwx, -s * dwy], axis=-1),
    }
    return LossTerm(value, grads)


# -- rendering ------------------------------------------------------------


def rendering_loss(renders, targets, lam: float = 0.05, perceptual=None) -> LossTerm:
    """Sum over views of ``MSE + lam * perceptual``.

    ``perceptual`` is an optional callable ``(render, target) -> float``; the
    default contributes 0 (no pretrained perceptual network is bundled). The
    returned gradients cover the MSE part only, as a list under ``"renders"``.
    """
    renders = list(renders)
    targets = list(targets)
    if not renders or len(renders) != len(targets):
        raise EmptyInputError("rendering loss needs equally many (>= 1) renders and targets")
    total = 0.0
    grads = []
    for r, t in zip(renders, targets):
        r = np.asarray(r, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64)
        if r.shape != t.shape:
            raise ShapeMismatchError(f"render/target shapes differ: {r.shape} vs {t.shape}")
        diff = r - t
        total += float(np.mean(diff * diff))
        total += lam * (0.0 if perceptual is None else float(perceptual(r, t)))
        grads.append(2.0 * diff / diff.size)
    return LossTerm(total, {"renders": grads})


# -- total ----------------------------------------------------------------


def _value(term) -> float:
    return float(term.value) if isinstance(term, LossTerm) else float(term)


def total_loss(
    census=0.0,
    smooth1=0.0,
    smooth2=0.0,
    consistency=0.0,
    rendering=0.0,
    gcc=0.0,
    weights: LossWeights | None = None,
) -> LossReport:
    """Weighted sum of the loss terms.

    Terms may be floats or :class:`LossTerm`; gradients of LossTerm inputs are
    carried into the report. ``gcc`` is an injectable extra term (0 when
    unused).
    """
    w = weights or LossWeights()
    terms = {
        "census": census,
        "smooth1": smooth1,
        "smooth2": smooth2,
        "consistency": consistency,
        "gcc": gcc,
        "rendering": rendering,
    }
    values = {}
    for name, term in terms.items():
        v = _value(term)
        if not math.isfinite(v):
            raise InvalidTermError(name, v)
        values[name] = v
    total = (
        w.lambda_s1 * values["smooth1"]
        + w.lambda_s2 * values["smooth2"]
        + w.lambda_c * values["census"]
        + w.lambda_g * values["gcc"]
        + w.lambda_m * values["consistency"]
        + values["rendering"]
    )
    grads = {name: t.grads for name, t in terms.items() if isinstance(t, LossTerm)}
    return LossReport(total=total, gradients=grads, **values)
