import numpy as np
import pytest

from flowdepth import DepthMap, ResidualRefiner, fit_refiner, prepare_inputs, refine_depth, refiner_gradients
from flowdepth.errors import DivergenceError, InvalidModelError, ValidationError


def _inputs(rng, h=8, w=8):
    return rng.uniform(1, 3, (h, w)), DepthMap(rng.uniform(1, 3, (h, w))), rng.uniform(0, 1, (h, w))


def test_zero_refiner_is_identity():
    rng = np.random.default_rng(0)
    d_hyb, d_flow, m = _inputs(rng)
    out = refine_depth(ResidualRefiner.zeros(), d_hyb, d_flow, m)
    np.testing.assert_array_equal(out.data, d_hyb)


def test_constant_network():
    rng = np.random.default_rng(1)
    d_hyb, d_flow, m = _inputs(rng)
    ref = ResidualRefiner.zeros()
    ref.conv2_bias[:] = 0.25
    scale = np.median(d_hyb)
    out = refine_depth(ref, d_hyb, d_flow, m)
    np.testing.assert_allclose(out.data, d_hyb + 0.25 * scale, rtol=1e-15)


def test_invalid_flow_depth_enters_as_zero_with_zero_mask():
    d_hyb = np.full((4, 4), 2.0)
    d_flow = DepthMap(np.array([[np.nan] * 4] * 4))
    inp = prepare_inputs(d_hyb, d_flow, np.ones((4, 4)))
    assert np.all(inp.stack[1] == 0.0) and np.all(inp.stack[2] == 0.0)


def test_non_finite_parameters_rejected():
    ref = ResidualRefiner.zeros()
    ref.conv1_bias[0] = np.nan
    with pytest.raises(InvalidModelError):
        refine_depth(ref, np.ones((4, 4)), np.ones((4, 4)), np.ones((4, 4)))


def test_translation_equivariance():
    rng = np.random.default_rng(2)
    ref = ResidualRefiner.initialize(8, seed=3)
    d_hyb, d_flow, m = _inputs(rng, 12, 12)
    base = refine_depth(ref, d_hyb, d_flow, m).data
    sh = lambda a: np.roll(a, (2, 3), axis=(0, 1))  # noqa: E731
    # median is shift invariant, so normalization does not change
    moved = refine_depth(ref, sh(d_hyb), DepthMap(sh(d_flow.data)), sh(m)).data
    np.testing.assert_allclose(moved[4:-2, 5:-2], sh(base)[4:-2, 5:-2], rtol=1e-14)


def test_zero_upstream_gives_zero_gradients():
    rng = np.random.default_rng(4)
    inp = prepare_inputs(*_inputs(rng))
    grads = refiner_gradients(ResidualRefiner.initialize(8, 1), inp, np.zeros((8, 8)))
    assert all(np.all(g == 0) for g in grads.values())


def test_dead_relu_units_have_zero_conv1_gradient():
    rng = np.random.default_rng(5)
    ref = ResidualRefiner.initialize(8, seed=2)
    ref.conv1_bias[3] = -100.0  # channel 3 never fires
    inp = prepare_inputs(*_inputs(rng))
    grads = refiner_gradients(ref, inp, rng.normal(size=(8, 8)))
    assert np.all(grads["conv1_weights"][..., 3] == 0) and grads["conv1_bias"][3] == 0


def test_fit_keeps_optimal_zero_refiner():
    rng = np.random.default_rng(6)
    d = rng.uniform(1, 3, (8, 8))
    model, trace = fit_refiner(ResidualRefiner.zeros(), [(d, DepthMap(d), np.ones((8, 8)), d)], steps=20)
    assert all(v == 0.0 for v in trace)
    assert all(np.all(p == 0) for p in model.parameters().values())


def test_fit_learns_constant_offset():
    rng = np.random.default_rng(7)
    data = []
    for _ in range(2):
        d = rng.uniform(1.5, 2.5, (10, 10))
        data.append((d, DepthMap(d), rng.uniform(0, 1, (10, 10)), d + 1.0))
    model, trace = fit_refiner(None, data, steps=600, learning_rate=1e-2, seed=0)
    errs = [np.mean(np.abs(refine_depth(model, *s[:3]).data - s[3])) for s in data]
    assert max(errs) < 0.05
    assert trace[-1] < trace[0]


def test_fit_is_deterministic_and_monotone():
    rng = np.random.default_rng(8)
    d = rng.uniform(1, 3, (8, 8))
    data = [(d, DepthMap(d * 1.1), rng.uniform(0, 1, (8, 8)), d * 1.05)]
    a, ta = fit_refiner(None, data, steps=100, seed=3)
    b, tb = fit_refiner(None, data, steps=100, seed=3)
    assert ta == tb
    for k in a.parameters():
        np.testing.assert_array_equal(a.parameters()[k], b.parameters()[k])
    assert all(later <= earlier for earlier, later in zip(ta, ta[1:]))


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning", "ignore:invalid value:RuntimeWarning")
def test_fit_reports_divergence_step():
    rng = np.random.default_rng(9)
    d = rng.uniform(1, 3, (8, 8))
    with pytest.raises(DivergenceError) as info:
        fit_refiner(None, [(d, DepthMap(d), np.ones((8, 8)), d + 1)], steps=10, learning_rate=1e200)
    assert info.value.step >= 1


def test_fit_argument_validation():
    d = np.ones((4, 4))
    with pytest.raises(ValidationError):
        fit_refiner(None, [(d, d, d, d)], steps=0)
    with pytest.raises(ValidationError):
        fit_refiner(None, [(d, d, d, d)], learning_rate=0.0)
