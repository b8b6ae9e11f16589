"""Residual depth refinement: ``D_refine = D_hyb + Conv2(ReLU(Conv1([D_hyb, D_flow, M_flow])))``.

Both convolutions are 3x3 with zero padding 1. Depth channels are divided by
the median valid hybrid depth before entering the network and the residual is
multiplied back, which makes the refiner equivariant to scene scale.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, InvalidModelError, ShapeMismatchError, ValidationError
from .geometry import DepthMap, as_depth_map

logger = logging.getLogger(__name__)

IN_CHANNELS = 3
LR_BACKOFF = 0.5
LR_GROWTH = 1.1


@dataclass
class ResidualRefiner:
    conv1_weights: np.ndarray  # (3, 3, 3, Hc): ky, kx, in, out
    conv1_bias: np.ndarray  # (Hc,)
    conv2_weights: np.ndarray  # (3, 3, Hc, 1)
    conv2_bias: np.ndarray  # (1,)

    def __post_init__(self):
        self.conv1_weights = np.asarray(self.conv1_weights, dtype=np.float64)
        self.conv1_bias = np.asarray(self.conv1_bias, dtype=np.float64).reshape(-1)
        self.conv2_weights = np.asarray(self.conv2_weights, dtype=np.float64)
        self.conv2_bias = np.asarray(self.conv2_bias, dtype=np.float64).reshape(1)
        hc = self.conv1_bias.shape[0]
        if hc < 1:
            raise ValidationError("hidden_channels", "need at least one hidden channel")
        expected = {
            "conv1_weights": (3, 3, IN_CHANNELS, hc),
            "conv2_weights": (3, 3, hc, 1),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValidationError(name, f"expected shape {shape}, got {getattr(self, name).shape}")

    @property
    def hidden_channels(self) -> int:
        return self.conv1_bias.shape[0]

    @classmethod
    def zeros(cls, hidden_channels: int = 8) -> "ResidualRefiner":
        return cls(
            np.zeros((3, 3, IN_CHANNELS, hidden_channels)),
            np.zeros(hidden_channels),
            np.zeros((3, 3, hidden_channels, 1)),
            np.zeros(1),
        )

    @classmethod
    def initialize(cls, hidden_channels: int = 8, seed: int = 0) -> "ResidualRefiner":
        """Fan-in uniform init, ``U(-1/sqrt(9 C_in), 1/sqrt(9 C_in))`` per layer."""
        rng = np.random.default_rng(seed)
        b1 = 1.0 / np.sqrt(9 * IN_CHANNELS)
        b2 = 1.0 / np.sqrt(9 * hidden_channels)
        return cls(
            rng.uniform(-b1, b1, (3, 3, IN_CHANNELS, hidden_channels)),
            rng.uniform(-b1, b1, hidden_channels),
            rng.uniform(-b2, b2, (3, 3, hidden_channels, 1)),
            rng.uniform(-b2, b2, 1),
        )

    def parameters(self) -> dict[str, np.ndarray]:
        return {
            "conv1_weights": self.conv1_weights,
            "conv1_bias": self.conv1_bias,
            "conv2_weights": self.conv2_weights,
            "conv2_bias": self.conv2_bias,
        }

    def copy(self) -> "ResidualRefiner":
        return copy.deepcopy(self)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.parameters().values())


@dataclass
class RefinerInputs:
    """Network input stack plus the scale used to normalize it."""

    stack: np.ndarray  # (3, H, W)
    scale: float
    d_hyb: DepthMap


def prepare_inputs(d_hyb, d_flow, m_flow) -> RefinerInputs:
    hyb = as_depth_map(d_hyb)
    flow = as_depth_map(d_flow)
    m = np.asarray(m_flow, dtype=np.float64)
    if not (hyb.shape == flow.shape == m.shape):
        raise ShapeMismatchError(f"refiner inputs differ in shape: {hyb.shape}, {flow.shape}, {m.shape}")
    if hyb.shape[0] < 3 or hyb.shape[1] < 3:
        raise ShapeMismatchError("refiner needs H, W >= 3")
    if hyb.valid.any():
        scale = float(np.median(hyb.data[hyb.valid]))
    else:
        scale = 1.0
    # invalid flow depths enter as 0 with a zero mask so the network can ignore them
    stack = np.stack(
        [
            hyb.filled(0.0) / scale,
            flow.filled(0.0) / scale,
            np.where(flow.valid, m, 0.0),
        ]
    )
    return RefinerInputs(stack, scale, hyb)


def _patches(x: np.ndarray) -> np.ndarray:
    """(C, H, W) -> (9, C, H, W) zero-padded 3x3 neighborhoods, k = 3 ky + kx."""
    c, h, w = x.shape
    xp = np.zeros((c, h + 2, w + 2))
    xp[:, 1:-1, 1:-1] = x
    return np.stack([xp[:, ky : ky + h, kx : kx + w] for ky in range(3) for kx in range(3)])


def _unpatch(g: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`_patches`."""
    _, c, h, w = g.shape
    out = np.zeros((c, h + 2, w + 2))
    for k in range(9):
        ky, kx = divmod(k, 3)
        out[:, ky : ky + h, kx : kx + w] += g[k]
    return out[:, 1:-1, 1:-1]


def _conv(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    cin, cout = weights.shape[2], weights.shape[3]
    p = _patches(x)
    h, w = x.shape[1:]
    out = weights.reshape(9 * cin, cout).T @ p.reshape(9 * cin, h * w)
    return out.reshape(cout, h, w) + bias[:, None, None], p


def _forward(refiner: ResidualRefiner, stack: np.ndarray):
    z1, p1 = _conv(stack, refiner.conv1_weights, refiner.conv1_bias)
    a1 = np.maximum(z1, 0.0)
    z2, p2 = _conv(a1, refiner.conv2_weights, refiner.conv2_bias)
    return z2[0], (p1, z1, p2)


def residual(refiner: ResidualRefiner, inputs: RefinerInputs) -> np.ndarray:
    """Residual correction in meters."""
    if not refiner.is_finite():
        raise InvalidModelError("refiner parameters contain non-finite values")
    out, _ = _forward(refiner, inputs.stack)
    return inputs.scale * out


def refine_depth(refiner: ResidualRefiner, d_hyb, d_flow, m_flow) -> DepthMap:
    """Hybrid depth plus the predicted residual; validity follows ``d_hyb``."""
    inputs = prepare_inputs(d_hyb, d_flow, m_flow)
    delta = residual(refiner, inputs)
    return DepthMap(inputs.d_hyb.filled(0.0) + delta, inputs.d_hyb.valid)


def refiner_gradients(refiner: ResidualRefiner, inputs: RefinerInputs, upstream) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every parameter.

    ``upstream`` is dL/dD_refine, an (H, W) raster; ``inputs`` comes from
    :func:`prepare_inputs`.
    """
    _, cache = _forward(refiner, inputs.stack)
    return _backward(refiner, cache, inputs.scale * np.asarray(upstream, dtype=np.float64))


def _backward(refiner: ResidualRefiner, cache, g2: np.ndarray) -> dict[str, np.ndarray]:
    # g2 is dL/d(network output)
    p1, z1, p2 = cache
    hc = refiner.hidden_channels
    h, w = g2.shape
    g_flat = g2.reshape(h * w)
    grad_w2 = (p2.reshape(9 * hc, h * w) @ g_flat).reshape(3, 3, hc, 1)
    grad_b2 = np.array([g_flat.sum()])
    g_patches = np.multiply.outer(refiner.conv2_weights.reshape(9, hc), g2)
    g_z1 = _unpatch(g_patches) * (z1 > 0)
    grad_w1 = (p1.reshape(9 * IN_CHANNELS, h * w) @ g_z1.reshape(hc, h * w).T).reshape(3, 3, IN_CHANNELS, hc)
    grad_b1 = g_z1.sum(axis=(1, 2))
    return {
        "conv1_weights": grad_w1,
        "conv1_bias": grad_b1,
        "conv2_weights": grad_w2,
        "conv2_bias": grad_b2,
    }


@dataclass
class FitSample:
    inputs: RefinerInputs
    target: np.ndarray  # d_gt
    mask: np.ndarray  # pixels entering the loss


def _make_samples(dataset) -> list[FitSample]:
    samples = []
    for d_hyb, d_flow, m_flow, d_gt in dataset:
        inputs = prepare_inputs(d_hyb, d_flow, m_flow)
        gt = as_depth_map(d_gt)
        mask = gt.valid & inputs.d_hyb.valid
        samples.append(FitSample(inputs, gt.filled(0.0), mask))
    if not samples or not any(s.mask.any() for s in samples):
        raise ValidationError("dataset", "no supervised pixel in the fitting set")
    return samples


def _loss_and_grads(refiner: ResidualRefiner, samples: list[FitSample], with_grad: bool = True):
    """Mean squared depth error, measured in units of each sample's median depth."""
    n = sum(int(s.mask.sum()) for s in samples)
    total = 0.0
    grads = {k: np.zeros_like(v) for k, v in refiner.parameters().items()}
    for s in samples:
        out, cache = _forward(refiner, s.inputs.stack)
        pred = s.inputs.d_hyb.filled(0.0) + s.inputs.scale * out
        err = np.where(s.mask, (pred - s.target) / s.inputs.scale, 0.0)
        total += float(np.sum(err * err))
        if with_grad:
            for k, g in _backward(refiner, cache, 2.0 * err / n).items():
                grads[k] += g
    return total / n, grads


def fitting_loss(refiner: ResidualRefiner, dataset) -> float:
    return _loss_and_grads(refiner, _make_samples(dataset), with_grad=False)[0]


def fit_refiner(
    refiner: ResidualRefiner | None,
    dataset,
    steps: int = 2000,
    learning_rate: float = 3e-3,
    seed: int = 0,
    hidden_channels: int = 8,
) -> tuple[ResidualRefiner, list[float]]:
    """Full-batch Adam on the normalized mean squared depth error.

    ``dataset`` is an iterable of ``(d_hyb, d_flow, m_flow, d_gt)``. When
    ``refiner`` is None a fresh one is drawn from ``seed``.

    A step that would raise the loss is rejected and the learning rate cut by
    :data:`LR_BACKOFF`; accepted steps let it grow back towards
    ``learning_rate``. The returned trace (loss before each step, then the
    final loss) therefore never increases.
    """
    if steps < 1:
        raise ValidationError("steps", "need at least one step")
    if not learning_rate > 0:
        raise ValidationError("learning_rate", "must be positive")
    model = ResidualRefiner.initialize(hidden_channels, seed) if refiner is None else refiner.copy()
    samples = _make_samples(dataset)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    m = {k: np.zeros_like(v) for k, v in model.parameters().items()}
    v = {k: np.zeros_like(v) for k, v in model.parameters().items()}
    lr = learning_rate
    t = 0  # accepted updates, for bias correction
    loss, grads = _loss_and_grads(model, samples)
    if not np.isfinite(loss):
        raise DivergenceError(0, loss)
    trace = []
    for step in range(1, steps + 1):
        trace.append(loss)
        trial = model.copy()
        m_new, v_new = {}, {}
        for k, p in trial.parameters().items():
            g = grads[k]
            m_new[k] = beta1 * m[k] + (1 - beta1) * g
            v_new[k] = beta2 * v[k] + (1 - beta2) * g * g
            m_hat = m_new[k] / (1 - beta1 ** (t + 1))
            v_hat = v_new[k] / (1 - beta2 ** (t + 1))
            p -= lr * m_hat / (np.sqrt(v_hat) + eps)
        trial_loss, trial_grads = _loss_and_grads(trial, samples)
        if not np.isfinite(trial_loss):
            raise DivergenceError(step, trial_loss)
        if trial_loss <= loss:
            model, loss, grads, m, v = trial, trial_loss, trial_grads, m_new, v_new
            t += 1
            lr = min(lr * LR_GROWTH, learning_rate)
        else:
            # stale momentum may point uphill; retry along the preconditioned gradient
            m = {k: np.zeros_like(x) for k, x in m.items()}
            lr *= LR_BACKOFF
        if step % 500 == 0:
            logger.debug("fit step %d loss %.6g lr %.3g", step, loss, lr)
    trace.append(loss)
    return model, trace
