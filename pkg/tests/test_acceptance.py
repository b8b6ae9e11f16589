"""Acceptance criteria 1-10.

Each test prints one ``PASS``/``FAIL`` line with the measured value and the
bound it was held to, then asserts. Run with ``pytest -v -s`` to see the lines
inline; they are also echoed in the terminal summary via ``capsys.disabled``.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from flowdepth import (
    CameraIntrinsics,
    DepthMap,
    MatchingConfig,
    ResidualRefiner,
    RigidTransform,
    adaptive_radius,
    compute_matching,
    depth_metrics,
    fit_refiner,
    io,
    make_occluder_scene,
    make_plane_scene,
    multiview_consistency_loss,
    normalize_depth,
    project,
    psnr,
    refine_depth,
    ssim,
    transform_point,
    triangulate_pixel,
    unproject,
)
from flowdepth.cli import main, mask_ablation
from flowdepth.gradcheck import run_gradchecks
from flowdepth.pipeline import OUTPUT_FILES, fitting_benchmark, mean_abs_error
from tests.oracles import random_rotation, reference_matching, scan_depth, triangulation_terms

FIXTURE = Path(__file__).parent / "fixtures" / "refiner_fitted.bin"


@pytest.fixture
def report(capsys):
    def emit(criterion, passed, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}")
        assert passed, detail

    return emit


def _random_instance(rng):
    K = CameraIntrinsics(*rng.uniform(80, 300, 2), *rng.uniform(20, 44, 2), 64, 64)
    R = random_rotation(rng, 0.2)
    t = rng.uniform(-0.3, 0.3, 3)
    t[:2] += np.sign(t[:2]) * 0.05  # keep the baseline clear of zero
    return K, RigidTransform(R, t)


def test_criterion_1_triangulation_exactness(report):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst_rel, worst_scan, n = 0.0, 0.0, 0
    while n < 1000:
        K, T = _random_instance(rng)
        u = rng.uniform(4, 60, 2)
        d_true = rng.uniform(0.5, 30)
        p2 = transform_point(unproject(u, d_true, K), T)
        if p2[2] <= 0.1:
            continue
        flow = project(p2, K) - u
        a, b = triangulation_terms(u, flow, K.matrix, T.rotation, T.translation)
        if np.dot(a, a) < 1e-6:  # near the epipole the problem is ill-posed
            continue
        d, ok = triangulate_pixel(u, flow, K, T)
        assert ok
        worst_rel = max(worst_rel, abs(d - d_true) / d_true)
        d_scan, step = scan_depth(a, b, lo=0.1, hi=40.0)
        worst_scan = max(worst_scan, abs(d - d_scan) / step)
        n += 1
    elapsed = time.perf_counter() - start
    ok = worst_rel < 1e-6 and worst_scan <= 1.0 and elapsed < 5.0
    report(1, ok, f"max rel err {worst_rel:.2e} (<1e-6), scan gap {worst_scan:.2f} grid steps (<=1), {elapsed:.2f}s (<5s)")


def test_criterion_2_matching_oracle_bitwise(report):
    rng = np.random.default_rng(7)
    start = time.perf_counter()
    mismatches = 0
    configs = [(0, 2), (1, 4), (1, 8)]
    for i in range(20):
        cfg = MatchingConfig(*configs[i % 3])
        fa, fb = rng.normal(size=(2, 16, 16, 8))
        d = rng.uniform(1, 10, (16, 16))
        got, ref = compute_matching(fa, fb, d, cfg), reference_matching(fa, fb, d, cfg)
        same = (
            np.array_equal(got.flow, ref.flow)
            and np.array_equal(got.confidence, ref.confidence)
            and np.array_equal(got.radius_map, ref.radius_map)
        )
        mismatches += not same
    elapsed = time.perf_counter() - start
    report(2, mismatches == 0 and elapsed < 30, f"{mismatches}/20 instances differ bitwise, {elapsed:.2f}s (<30s)")


def test_criterion_3_normalize_radius_confidence(report):
    exact = np.array_equal(normalize_depth(np.full((3, 3), 5.0)), np.zeros((3, 3)))
    out = normalize_depth(np.array([[1.0, 2.0, 3.0]]), 1e-6)[0]
    exact &= np.array_equal(out, [0.0, 1.0 / (2.0 + 1e-6), 2.0 / (2.0 + 1e-6)])
    cfg = MatchingConfig(1, 8)
    exact &= [adaptive_radius(v, cfg) for v in (0.0, 1.0, 0.5)] == [1, 8, 4]

    rng = np.random.default_rng(3)
    lo_gap, hi_gap, pixels = np.inf, np.inf, 0
    while pixels < 10_000:
        c = int(rng.integers(1, 9))
        h, w = rng.integers(4, 21, 2)
        cfg = MatchingConfig(int(rng.integers(0, 3)), int(rng.integers(3, 7)))
        fa = rng.normal(scale=rng.uniform(0.1, 10), size=(h, w, c))
        fb = rng.normal(scale=rng.uniform(0.1, 10), size=(h, w, c))
        res = compute_matching(fa, fb, rng.uniform(0.5, 50, (h, w)), cfg)
        window = (2 * res.radius_map + 1) ** 2
        lo_gap = min(lo_gap, float(np.min(res.confidence - 1.0 / window)))
        hi_gap = min(hi_gap, float(np.min(1.0 - res.confidence)))
        pixels += h * w
    ok = bool(exact) and lo_gap >= 0 and hi_gap >= 0
    report(3, ok, f"examples exact={bool(exact)}, f_c in [1/window, 1] on {pixels} pixels (margins {lo_gap:.2e}, {hi_gap:.2e})")


def test_criterion_4_occlusion_mask_fidelity(report):
    start = time.perf_counter()
    rows = {name: [] for name in ("feature-correlation", "fb-consistency", "depth-flow")}
    for seed in range(10):
        for name, stats in mask_ablation(seed).items():
            rows[name].append(stats["agreement"])
    elapsed = time.perf_counter() - start
    ours = min(rows["feature-correlation"])
    baselines = ", ".join(f"{k} mean {np.mean(v):.3f}" for k, v in rows.items() if k != "feature-correlation")
    report(4, ours >= 0.95 and elapsed < 60, f"min agreement {ours:.4f} (>=0.95); {baselines}; {elapsed:.1f}s (<60s)")


def test_criterion_5_consistency_properties(report):
    scene = make_plane_scene()
    zero = multiview_consistency_loss(
        scene.depth_gt[0], scene.depth_gt[1], scene.flow_gt, scene.occlusion_gt.astype(float)
    ).value

    occ = make_occluder_scene(seed=5)
    m = occ.occlusion_gt.astype(float)
    d_ref, d_tgt = occ.depth_gt[0].data, occ.depth_gt[1].data
    base = multiview_consistency_loss(d_ref, d_tgt, occ.flow_gt, m).value
    rng = np.random.default_rng(0)
    corrupted = np.where(m == 0, d_ref * rng.uniform(0.1, 10, m.shape), d_ref)
    invariant = multiview_consistency_loss(corrupted, d_tgt, occ.flow_gt, m).value == base

    d = rng.uniform(1, 3, (6, 6))
    half = multiview_consistency_loss(d, d + 1.0, np.zeros((6, 6, 2)), np.full((6, 6), 0.5)).value
    ok = zero < 1e-6 and invariant and half == 0.5
    report(5, ok, f"consistent scene {zero:.2e} (<1e-6), masked corruption invariant={invariant}, half-mask {half} (==0.5)")


def test_criterion_6_gradient_checks(report):
    start = time.perf_counter()
    results = run_gradchecks(seed=0, instances=5, size=9)
    elapsed = time.perf_counter() - start
    failed = [r.name for r in results if not r.passed]
    worst = max(r.max_deviation for r in results)
    report(6, not failed and elapsed < 60, f"{len(results)} cases, failed={failed}, worst deviation {worst:.2e}, {elapsed:.1f}s (<60s)")


def test_criterion_7_fusion_improvement(report):
    start = time.perf_counter()
    data = fitting_benchmark(0)
    refiner, trace = fit_refiner(None, data, steps=2000, seed=0)
    before = np.mean([mean_abs_error(DepthMap(s[0].data), s[3]) for s in data])
    after = np.mean([mean_abs_error(refine_depth(refiner, *s[:3]), s[3]) for s in data])
    elapsed = time.perf_counter() - start
    reduction = 1 - after / before

    a, ta = fit_refiner(None, data[:2], steps=30, seed=4)
    b, tb = fit_refiner(None, data[:2], steps=30, seed=4)
    deterministic = ta == tb and all(np.array_equal(a.parameters()[k], b.parameters()[k]) for k in a.parameters())
    ok = reduction >= 0.30 and elapsed < 120 and deterministic
    report(
        7,
        ok,
        f"MAE {before:.4f} -> {after:.4f}, reduction {reduction:.1%} (>=30%), deterministic={deterministic}, {elapsed:.1f}s (<120s)",
    )


def test_criterion_8_end_to_end_pipeline(report, tmp_path, capsys):
    scene = tmp_path / "scene"
    assert main(["synth", "plane", "--hybrid-error", "0.1", "--out", str(scene)]) == 0
    args = [
        "pipeline",
        "--image1", scene / "image1.ppm",
        "--image2", scene / "image2.ppm",
        "--features1", scene / "features1.pfm",
        "--features2", scene / "features2.pfm",
        "--hybrid", scene / "hybrid.pfm",
        "--camera", scene / "camera.txt",
        "--flow", scene / "flow_gt.pfm",
        "--refiner", FIXTURE,
    ]  # fmt: skip
    for out in ("a", "b"):
        assert main([str(x) for x in args] + ["--out", str(tmp_path / out)]) == 0
    capsys.readouterr()
    gt = io.read_pfm(scene / "depth_gt1.pfm")
    refined = io.read_pfm(tmp_path / "a" / "drefine.pfm")
    hybrid = io.read_pfm(scene / "hybrid.pfm")
    med = float(np.median(np.abs(refined - gt) / gt))
    med_hyb = float(np.median(np.abs(hybrid - gt) / gt))
    identical = all((tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in OUTPUT_FILES)
    report(8, med < 0.01 and identical, f"median rel err {med:.4%} (<1%, hybrid input {med_hyb:.2%}), rerun bitwise identical={identical}")


def test_criterion_9_metrics_examples(report):
    rng = np.random.default_rng(0)
    a = rng.uniform(0.2, 0.8, (16, 16, 3))
    gt = rng.uniform(1, 5, (8, 8))
    checks = {
        "psnr identical": psnr(a, a) == np.inf,
        "psnr 20dB": psnr(a + 0.1, a) == pytest.approx(20.0, abs=1e-9),
        "ssim identical": abs(ssim(a, a) - 1.0) <= 1e-9,
        "ssim symmetric": abs(ssim(a, a * 0.7) - ssim(a * 0.7, a)) <= 1e-12,
        "abs_rel identity": depth_metrics(gt, gt).abs_rel == 0.0 and depth_metrics(gt, gt).delta1 == 1.0,
        "abs_rel 0.2": depth_metrics(np.full((4, 4), 1.2), np.ones((4, 4))).abs_rel == pytest.approx(0.2, abs=1e-15),
        "delta1 below bound": depth_metrics(np.full((4, 4), 1.2), np.ones((4, 4))).delta1 == 1.0,
        "delta1 at 1.25": depth_metrics(1.25 * gt, gt).delta1 == 0.0,
    }
    failed = [k for k, v in checks.items() if not v]
    report(9, not failed, f"{len(checks) - len(failed)}/{len(checks)} examples exact, failed={failed}")


def test_criterion_10_format_round_trips(report, tmp_path):
    rng = np.random.default_rng(10)
    counts = dict.fromkeys(("pfm", "ppm", "camera", "refiner"), 0)

    def f32(shape):
        # mixed magnitudes incl. zeros, negatives and subnormal-adjacent values
        x = rng.normal(size=shape) * 10.0 ** rng.integers(-30, 30, shape)
        return x.astype(np.float32)

    for i in range(100):
        h, w = rng.integers(1, 12, 2)
        raster = f32((h, w)) if i % 2 else f32((h, w, 3))
        p = tmp_path / "r.pfm"
        io.write_pfm(p, raster)
        counts["pfm"] += np.array_equal(io.read_pfm(p), raster)

        img = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
        q = tmp_path / "i.ppm"
        io.write_ppm(q, img)
        counts["ppm"] += np.array_equal(io.read_ppm_bytes(q), img)

        K = CameraIntrinsics(*rng.uniform(1, 1000, 2), *rng.uniform(-50, 150, 2), int(w) + 2, int(h) + 2)
        T = RigidTransform(random_rotation(rng, np.pi), rng.normal(scale=10, size=3))
        c = tmp_path / "camera.txt"
        io.write_camera(c, K, T)
        K2, T2 = io.read_camera(c)
        counts["camera"] += K2 == K and np.array_equal(T2.matrix, T.matrix)

        hidden = int(rng.integers(1, 12))
        shapes = ResidualRefiner.initialize(hidden, seed=i).parameters()
        ref = ResidualRefiner(*(f32(v.shape).astype(np.float64) for v in shapes.values()))
        r = tmp_path / "ref.bin"
        io.write_refiner(r, ref)
        back = io.read_refiner(r).parameters()
        counts["refiner"] += all(np.array_equal(back[k], v) for k, v in ref.parameters().items())
    ok = all(v == 100 for v in counts.values())
    report(10, ok, ", ".join(f"{k} {v}/100 lossless" for k, v in counts.items()))
