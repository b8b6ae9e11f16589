"""End-to-end depth pipeline and the synthetic refiner-fitting benchmark.

matching -> warping / occlusion -> flow probability mask -> flow
triangulation -> residual refinement -> Gaussian centers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .errors import FlowDepthError, ValidationError
from .fusion import ResidualRefiner, refine_depth
from .geometry import CameraIntrinsics, DepthMap, RigidTransform, as_depth_map, bilinear_sample, check_same_hw, pixel_grid, unproject_depth_map
from .losses import LossReport, LossWeights, census_loss, smoothness_loss, total_loss
from .matching import MatchingConfig, MatchingResult, compute_matching
from .occlusion import OcclusionConfig, flow_probability_mask, occlusion_mask, warp_features
from .synth import SyntheticScene, make_occluder_scene, make_plane_scene, occluder_config, plane_config, structured_hybrid_depth
from .triangulation import TriangulationConfig, flow_depth_map


@dataclass
class PipelineConfig:
    matching: MatchingConfig = field(default_factory=MatchingConfig)
    occlusion: OcclusionConfig = field(default_factory=OcclusionConfig)
    triangulation: TriangulationConfig = field(default_factory=TriangulationConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    refiner_path: Path | None = None
    output_dir: Path | None = None


@dataclass
class PipelineResult:
    matching: MatchingResult
    flow: np.ndarray  # flow used for triangulation
    in_bounds: np.ndarray
    m_occ: np.ndarray
    m_flow: np.ndarray
    d_flow: DepthMap
    d_refine: DepthMap
    centers: np.ndarray  # (N, 3), row-major over valid pixels
    losses: LossReport


def gaussian_centers(d_refine: DepthMap, K: CameraIntrinsics) -> np.ndarray:
    pts, valid = unproject_depth_map(d_refine, K)
    return pts[valid]


def run_pipeline(
    images,
    features,
    d_hyb,
    K: CameraIntrinsics,
    T: RigidTransform,
    cfg: PipelineConfig | None = None,
    refiner: ResidualRefiner | None = None,
    flow: np.ndarray | None = None,
) -> PipelineResult:
    """Run the depth pipeline on one reference/target pair.

    ``flow`` overrides the matched flow for triangulation and losses (the
    masks still come from matching). With no refiner the zero refiner is used,
    so the refined depth equals the hybrid depth.
    """
    cfg = cfg or PipelineConfig()
    i1, i2 = (np.asarray(im, dtype=np.float64) for im in images)
    f1, f2 = (np.asarray(f, dtype=np.float64) for f in features)
    dm = as_depth_map(d_hyb)
    check_same_hw(i1, i2, f1, f2, dm.data, names=("image1", "image2", "features1", "features2", "hybrid depth"))
    if dm.shape != K.shape:
        raise ValidationError("camera", f"raster is {dm.shape} but camera says {K.shape}")
    refiner = refiner or ResidualRefiner.zeros()

    match = compute_matching(f1, f2, dm, cfg.matching)
    warped, in_bounds = warp_features(f2, dm, K, T)
    m_occ = occlusion_mask(f1, warped, in_bounds, cfg.occlusion)
    m_flow = flow_probability_mask(m_occ, match.confidence)

    used_flow = match.flow if flow is None else np.asarray(flow, dtype=np.float64)
    check_same_hw(used_flow, dm.data, names=("flow", "hybrid depth"))
    d_flow = flow_depth_map(used_flow, K, T, cfg.triangulation)
    d_refine = refine_depth(refiner, dm, d_flow, m_flow)

    h, w = dm.shape
    target = pixel_grid(h, w) + used_flow
    i2_warped, i2_inb = bilinear_sample(i2, target[..., 0], target[..., 1])
    try:
        census = census_loss(i1, i2_warped, i2_inb)
    except FlowDepthError:
        census = 0.0
    report = total_loss(
        census=census,
        smooth1=smoothness_loss(used_flow, i1, 1),
        smooth2=smoothness_loss(used_flow, i1, 2),
        weights=cfg.weights,
    )
    return PipelineResult(
        match, used_flow, in_bounds, m_occ, m_flow, d_flow, d_refine, gaussian_centers(d_refine, K), report
    )


OUTPUT_FILES = (
    "flow.pfm",
    "fc.pfm",
    "mocc.pfm",
    "mflow.pfm",
    "dflow.pfm",
    "dflow_valid.pfm",
    "drefine.pfm",
    "drefine_valid.pfm",
    "centers.txt",
    "losses.txt",
)


def write_outputs(result: PipelineResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_flow_pfm(out / "flow.pfm", result.flow)
    io.write_pfm(out / "fc.pfm", result.matching.confidence)
    io.write_pfm(out / "mocc.pfm", result.m_occ.astype(np.float64))
    io.write_pfm(out / "mflow.pfm", result.m_flow)
    io.write_pfm(out / "dflow.pfm", result.d_flow.filled(0.0))
    io.write_pfm(out / "dflow_valid.pfm", result.d_flow.valid.astype(np.float64))
    io.write_pfm(out / "drefine.pfm", result.d_refine.filled(0.0))
    io.write_pfm(out / "drefine_valid.pfm", result.d_refine.valid.astype(np.float64))
    io.write_points(out / "centers.txt", result.centers)
    (out / "losses.txt").write_text(result.losses.to_text() + "\n")


def export_scene(scene: SyntheticScene, out_dir, hybrid: DepthMap | None = None) -> dict[str, Path]:
    """Write a scene in the pipeline's input formats; returns the file map.

    ``hybrid`` defaults to the view-1 ground-truth depth.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h = scene.K.height
    files = {
        "image1": out / "image1.ppm",
        "image2": out / "image2.ppm",
        "features1": out / "features1.pfm",
        "features2": out / "features2.pfm",
        "hybrid": out / "hybrid.pfm",
        "camera": out / "camera.txt",
        "flow": out / "flow_gt.pfm",
        "depth1": out / "depth_gt1.pfm",
        "depth2": out / "depth_gt2.pfm",
        "occlusion": out / "occlusion_gt.pfm",
    }
    io.write_ppm(files["image1"], scene.images[0])
    io.write_ppm(files["image2"], scene.images[1])
    io.write_feature_pfm(files["features1"], scene.features[0])
    io.write_feature_pfm(files["features2"], scene.features[1])
    io.write_pfm(files["hybrid"], (hybrid or scene.depth_gt[0]).filled(0.0))
    io.write_camera(files["camera"], scene.K, scene.T_12)
    io.write_flow_pfm(files["flow"], scene.flow_gt)
    io.write_pfm(files["depth1"], scene.depth_gt[0].filled(0.0))
    io.write_pfm(files["depth2"], scene.depth_gt[1].filled(0.0))
    io.write_pfm(files["occlusion"], scene.occlusion_gt.astype(np.float64))
    assert scene.features[0].shape[0] == h
    return files


# -- refiner fitting benchmark --------------------------------------------

HYBRID_ERROR = 0.1
TRUST_THRESHOLD = 0.1


def benchmark_sample(scene: SyntheticScene, seed: int, cfg: PipelineConfig | None = None, corrupt: bool = True):
    """``(d_hyb, d_flow, m_flow, d_gt)`` for one scene.

    Hybrid depth is ground truth with a smooth multiplicative error; flow depth
    is triangulated from the analytic flow, then scrambled wherever the flow
    probability mask is below :data:`TRUST_THRESHOLD` so the refiner must learn
    to rely on the mask.
    """
    cfg = cfg or PipelineConfig()
    gt = scene.depth_gt[0]
    d_hyb = structured_hybrid_depth(gt, HYBRID_ERROR, seed)
    match = compute_matching(scene.features[0], scene.features[1], d_hyb, cfg.matching)
    warped, inb = warp_features(scene.features[1], d_hyb, scene.K, scene.T_12)
    m_flow = flow_probability_mask(occlusion_mask(scene.features[0], warped, inb, cfg.occlusion), match.confidence)
    d_flow = flow_depth_map(scene.flow_gt, scene.K, scene.T_12, cfg.triangulation)
    if corrupt:
        rng = np.random.default_rng([seed, 7])
        noisy = d_flow.data * rng.uniform(0.5, 1.5, d_flow.shape)
        d_flow = DepthMap(np.where(m_flow < TRUST_THRESHOLD, noisy, d_flow.data), d_flow.valid)
    return d_hyb, d_flow, m_flow, gt


def fitting_benchmark(seed: int = 0, n_scenes: int = 6, cfg: PipelineConfig | None = None) -> list[tuple]:
    """Structured-error fitting set: alternating plane and occluder scenes with
    seed-dependent depths and baselines."""
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n_scenes):
        scene_seed = int(rng.integers(1 << 31))
        if i % 2 == 0:
            depth = float(rng.uniform(1.5, 3.0))
            scene = make_plane_scene(plane_config(depth=depth, baseline=float(rng.uniform(0.05, 0.12)), seed=scene_seed))
        else:
            depth = float(rng.uniform(2.0, 3.5))
            scene = make_occluder_scene(
                occluder_config(
                    depth=depth,
                    fg_depth=depth * float(rng.uniform(0.4, 0.7)),
                    baseline=float(rng.uniform(0.05, 0.1)),
                    fg_center=(float(rng.uniform(20, 44)), float(rng.uniform(20, 44))),
                    seed=scene_seed,
                )
            )
        samples.append(benchmark_sample(scene, scene_seed, cfg))
    return samples


def mean_abs_error(depth: DepthMap, gt: DepthMap) -> float:
    both = depth.valid & gt.valid
    return float(np.mean(np.abs(depth.data[both] - gt.data[both])))
