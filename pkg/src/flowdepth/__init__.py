"""Flow-guided depth estimation for feed-forward Gaussian splatting.

Depth-guided local matching, feature-correlation occlusion masks, closed-form
triangulation from flow, a residual fusion refiner, self-supervised losses,
metrics, synthetic two-view scenes and the file formats tying them together.
"""

from .errors import *  # noqa: F401,F403
from .fusion import ResidualRefiner, fit_refiner, prepare_inputs, refine_depth, refiner_gradients
from .geometry import (
    CameraIntrinsics,
    DepthMap,
    RigidTransform,
    bilinear_sample,
    pixel_grid,
    project,
    transform_point,
    unproject,
    unproject_depth_map,
)
from .losses import (
    LossReport,
    LossTerm,
    LossWeights,
    census_loss,
    multiview_consistency_loss,
    rendering_loss,
    smoothness_loss,
    total_loss,
)
from .matching import MatchingConfig, MatchingResult, adaptive_radius, compute_matching, normalize_depth
from .metrics import DepthMetricReport, depth_metrics, psnr, ssim
from .occlusion import OcclusionConfig, flow_probability_mask, occlusion_mask, warp_features
from .pipeline import PipelineConfig, PipelineResult, run_pipeline
from .synth import (
    SceneConfig,
    SyntheticScene,
    baseline_depthflow_mask,
    baseline_fb_consistency_mask,
    make_occluder_scene,
    make_plane_scene,
)
from .triangulation import TriangulationConfig, flow_depth_map, triangulate_pixel

__version__ = "0.1.0"
