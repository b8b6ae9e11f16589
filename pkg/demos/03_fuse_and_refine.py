"""Fuse noisy hybrid depth with flow depth through the residual refiner.

Uses the refiner fitted by ``flowdepth fit`` (2000 steps on six scenes) and
evaluates it on scenes it never saw. A 500-step fit is shown for contrast:
it already fits the training set closely but recovers less on new scenes.

Run: python demos/03_fuse_and_refine.py
"""

from pathlib import Path

from flowdepth import DepthMap, depth_metrics, fit_refiner, io, make_occluder_scene, make_plane_scene, refine_depth
from flowdepth.pipeline import benchmark_sample, fitting_benchmark

fitted = io.read_refiner(Path(__file__).parents[1] / "tests" / "fixtures" / "refiner_fitted.bin")
short, trace = fit_refiner(None, fitting_benchmark(seed=0), steps=500, seed=0)
print(f"500-step fit: training loss {trace[0]:.4f} -> {trace[-1]:.4f}")

print(f"{'held-out scene':<16} {'hybrid':>8} {'500 steps':>10} {'fitted':>8}   (abs_rel)")
for make, seed in [(make_occluder_scene, 99), (make_plane_scene, 7)]:
    d_hyb, d_flow, m_flow, gt = benchmark_sample(make(seed=seed), seed=seed)
    row = [depth_metrics(DepthMap(d_hyb.data), gt).abs_rel]
    row += [depth_metrics(refine_depth(r, d_hyb, d_flow, m_flow), gt).abs_rel for r in (short, fitted)]
    print(f"{make.__name__.split('_')[1] + f' seed {seed}':<16} {row[0]:>8.4f} {row[1]:>10.4f} {row[2]:>8.4f}")
