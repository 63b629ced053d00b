"""CPU Gaussian splatting renderer and primitive-pruning laboratory."""

from .estimators import CrossViewPruner, ImportanceScorer, PixelwisePruner
from .io import read_cameras, read_image, read_ply, write_cameras, write_image, write_ply
from .metrics import MetricsReport, benchmark_fps, evaluate, psnr, ssim
from .model import CameraView, GaussianPrimitive, Scene, activate_opacity, build_covariance_3d, evaluate_sh
from .projection import Projected2DGaussian, evaluate_2d_gaussian, perspective_jacobian, project_gaussian
from .pruning import (
    PruneMask,
    PruneSpec,
    apply_mask,
    prune_cross_ratio,
    prune_cross_stochastic,
    prune_cross_threshold,
    prune_pixelwise,
)
from .rasterizer import (
    ContributionRecord,
    ContributionStream,
    RenderOptions,
    RenderOutput,
    assign_tiles,
    render,
    render_oracle,
    render_views,
)
from .scoring import (
    RankedRays,
    ScoreContext,
    ScoreFunction,
    ScoreTable,
    aggregate_cross_view,
    gamma_volume,
    per_ray_score,
    rank_per_ray,
    score_records,
)
from .synthetic import SynthSpec, gen_camera_ring, gen_ground_truth, gen_scene

__version__ = "0.1.0"
