"""Command-line front end: ``flowdepth <command> ...``.

Exit codes: 0 success, 1 usage error, 2 input/format error, 3 validation or
check failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import FlowDepthError, FormatError, ShapeMismatchError
from .fusion import fit_refiner, refine_depth
from .geometry import DepthMap
from .gradcheck import run_gradchecks
from .losses import LossWeights
from .matching import MatchingConfig, compute_matching
from .metrics import depth_metrics, psnr, ssim
from .occlusion import OcclusionConfig, occlusion_mask, warp_features
from .pipeline import (
    PipelineConfig,
    export_scene,
    fitting_benchmark,
    mean_abs_error,
    run_pipeline,
    write_outputs,
)
from .synth import (
    baseline_depthflow_mask,
    baseline_fb_consistency_mask,
    make_occluder_scene,
    make_plane_scene,
    occluder_config,
    plane_config,
    structured_hybrid_depth,
)
from .triangulation import TriangulationConfig

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_CHECK = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class CheckFailed(Exception):
    """A command ran but its check did not pass (exit code 3)."""


PIPELINE_HELP = """\
Run the flow-depth pipeline on one reference/target pair.

Writes flow.pfm, fc.pfm, mocc.pfm, mflow.pfm, dflow.pfm, dflow_valid.pfm,
drefine.pfm, drefine_valid.pfm, centers.txt (one "x y z" line per valid
refined pixel) and losses.txt into the output directory.

Only Gaussian centers are produced. Opacity, covariance and color come from
a learned prediction head that is not part of this package.
"""


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    m = MatchingConfig()
    p.add_argument("--r-min", type=int, default=m.r_min)
    p.add_argument("--r-max", type=int, default=m.r_max)
    p.add_argument("--epsilon", type=float, default=m.epsilon, help="depth normalization epsilon")
    p.add_argument("--tau", type=float, default=OcclusionConfig().tau, help="occlusion threshold")
    t = TriangulationConfig()
    p.add_argument("--min-denominator", type=float, default=t.min_denominator)
    p.add_argument("--min-depth", type=float, default=t.min_depth)
    p.add_argument("--max-depth", type=float, default=t.max_depth)
    w = LossWeights()
    for name in w.__dict__:
        p.add_argument("--" + name.replace("_", "-"), type=float, default=getattr(w, name))


def _config_from(args) -> PipelineConfig:
    weights = LossWeights(**{k: getattr(args, k) for k in LossWeights().__dict__})
    return PipelineConfig(
        matching=MatchingConfig(args.r_min, args.r_max, args.epsilon),
        occlusion=OcclusionConfig(args.tau),
        triangulation=TriangulationConfig(args.min_denominator, args.min_depth, args.max_depth),
        weights=weights,
        refiner_path=args.refiner,
        output_dir=args.out,
    )


def _scene_args(p: argparse.ArgumentParser, kind: str) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64, help="square raster side")
    p.add_argument("--baseline", type=float, default=0.1)
    p.add_argument("--depth", type=float, default=None, help="(background) plane depth")
    if kind != "plane":
        p.add_argument("--fg-depth", type=float, default=1.25)


def _scene_from(args, kind: str):
    kw = {"width": args.size, "height": args.size, "baseline": args.baseline, "seed": args.seed}
    if args.depth is not None:
        kw["depth"] = args.depth
    if kind == "plane":
        return make_plane_scene(plane_config(**kw))
    c = args.size / 2.0
    return make_occluder_scene(occluder_config(fg_depth=args.fg_depth, fg_center=(c, c), **kw))


# -- commands -------------------------------------------------------------


def cmd_synth(args) -> int:
    scene = _scene_from(args, args.kind)
    hybrid = None
    if args.hybrid_error > 0:
        hybrid = structured_hybrid_depth(scene.depth_gt[0], args.hybrid_error, args.seed)
    files = export_scene(scene, args.out, hybrid)
    for name, path in files.items():
        print(f"{name}={path}")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = _config_from(args)
    images = [io.read_ppm(args.image1), io.read_ppm(args.image2)]
    h = images[0].shape[0]
    features = [io.read_feature_pfm(args.features1, h), io.read_feature_pfm(args.features2, h)]
    d_hyb = io.read_pfm(args.hybrid)
    K, T = io.read_camera(args.camera)
    flow = io.read_flow_pfm(args.flow) if args.flow else None
    refiner = io.read_refiner(args.refiner) if args.refiner else None
    result = run_pipeline(images, features, d_hyb, K, T, cfg, refiner, flow)
    write_outputs(result, args.out)
    print(result.losses.to_text())
    print(io.format_kv({"centers": len(result.centers), "dflow_valid": int(result.d_flow.valid.sum())}))
    return EXIT_OK


def _read_raster(path: Path) -> np.ndarray:
    if path.suffix.lower() == ".ppm":
        return io.read_ppm(path)
    return io.read_pfm(path)


def cmd_eval(args) -> int:
    pred, gt = _read_raster(args.pred), _read_raster(args.gt)
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"pred is {pred.shape} but gt is {gt.shape}")
    if args.kind == "image":
        values = {"psnr": psnr(pred, gt), "ssim": ssim(pred, gt)}
    else:
        rep = depth_metrics(pred, gt)
        scale = 100.0 if args.percent else 1.0
        values = {"abs_rel": rep.abs_rel * scale, "delta1": rep.delta1 * scale}
    print(io.format_kv(values))
    return EXIT_OK


def _mask_stats(mask: np.ndarray, gt_visible: np.ndarray) -> dict[str, float]:
    """Precision/recall of the *occluded* class plus overall pixel agreement."""
    pred_occ = mask == 0
    gt_occ = gt_visible == 0
    tp = float(np.sum(pred_occ & gt_occ))
    precision = tp / pred_occ.sum() if pred_occ.any() else 1.0
    recall = tp / gt_occ.sum() if gt_occ.any() else 1.0
    return {"precision": precision, "recall": recall, "agreement": float(np.mean(pred_occ == gt_occ))}


def mask_ablation(seed: int = 0, cfg: PipelineConfig | None = None) -> dict[str, dict[str, float]]:
    """Compare the three occlusion masks on the default occluder scene."""
    cfg = cfg or PipelineConfig()
    scene = make_occluder_scene(seed=seed)
    f1, f2 = scene.features
    d1 = scene.depth_gt[0]
    warped, inb = warp_features(f2, d1, scene.K, scene.T_12)
    match = compute_matching(f1, f2, d1, cfg.matching)
    rows = {
        "fb-consistency": baseline_fb_consistency_mask(scene.flow_gt, scene.flow_bwd_gt),
        "depth-flow": baseline_depthflow_mask(d1, scene.K, scene.T_12, match.flow),
        "feature-correlation": occlusion_mask(f1, warped, inb, cfg.occlusion),
    }
    return {name: _mask_stats(m, scene.occlusion_gt) for name, m in rows.items()}


def format_ablation(table: dict[str, dict[str, float]]) -> str:
    lines = [f"{'method':<20} {'precision':>9} {'recall':>9} {'agreement':>9}"]
    for name, s in table.items():
        lines.append(f"{name:<20} {s['precision']:>9.4f} {s['recall']:>9.4f} {s['agreement']:>9.4f}")
    return "\n".join(lines)


def cmd_ablate_masks(args) -> int:
    print(format_ablation(mask_ablation(args.seed)))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_gradchecks(seed=args.seed, instances=args.instances, size=args.size)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise CheckFailed("gradient check failed: " + ", ".join(failed))
    return EXIT_OK


def cmd_fit(args) -> int:
    data = fitting_benchmark(args.seed, args.scenes)
    refiner, trace = fit_refiner(None, data, steps=args.steps, learning_rate=args.lr, seed=args.seed)
    io.write_refiner(args.out, refiner)
    before = np.mean([mean_abs_error(DepthMap(d[0].data), d[3]) for d in data])
    after = np.mean([mean_abs_error(refine_depth(refiner, *d[:3]), d[3]) for d in data])
    print(io.format_kv({"loss_start": trace[0], "loss_end": trace[-1], "mae_hybrid": before, "mae_refined": after}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flowdepth", description="Flow-guided depth pipeline and evaluation harnesses.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="export a synthetic two-view scene")
    p.add_argument("kind", choices=("plane", "occluder"))
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--hybrid-error", type=float, default=0.0, help="smooth relative error on the exported hybrid depth")
    _scene_args(p, "occluder")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser(
        "pipeline", help="run the depth pipeline", description=PIPELINE_HELP, formatter_class=argparse.RawDescriptionHelpFormatter
    )
    for name in ("image1", "image2", "features1", "features2", "hybrid", "camera"):
        p.add_argument(f"--{name}", type=Path, required=True)
    p.add_argument("--flow", type=Path, help="flow PFM used instead of the matched flow for triangulation")
    p.add_argument("--refiner", type=Path, help="refiner parameter file (default: zero refiner)")
    p.add_argument("--out", type=Path, required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("eval", help="depth or image metrics as key=value")
    p.add_argument("kind", choices=("depth", "image"))
    p.add_argument("pred", type=Path)
    p.add_argument("gt", type=Path)
    p.add_argument("--percent", action="store_true", help="report depth metrics in percent")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate-masks", help="occlusion mask comparison table")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ablate_masks)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=5)
    p.add_argument("--size", type=int, default=9)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("fit", help="fit a refiner on the synthetic benchmark")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenes", type=int, default=6)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=3e-3)
    p.set_defaults(func=cmd_fit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, FormatError, ShapeMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (CheckFailed, FlowDepthError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
