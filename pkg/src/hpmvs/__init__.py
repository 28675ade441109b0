"""Multi-view stereo with non-local extensible propagation, planar priors,
and hierarchical prior mining."""

from .config import ABLATION_ROWS, RunConfig, dump_config, parse_config, row_config
from .errors import (
    DegenerateInputError,
    DegeneratePlaneError,
    DegenerateSupportError,
    EmptyCloudError,
    FormatError,
    HpmvsError,
    InsufficientViewsError,
)
from .fusion import FusionConfig, PointCloud, evaluate, fuse, read_ply, write_ply
from .geometry import CameraModel, Hypothesis, homography, plane_from_hypothesis
from .hpm import HpmSchedule, SceneRun, ViewRun, run_scene, run_view
from .patchmatch import (
    DepthNormalMap,
    PropagationConfig,
    extension_threshold,
    random_init,
    run_iterations,
    set_workers,
)
from .prior import PriorConfig, build_prior_model, fit_plane, knn_support, prior_assisted_cost
from .scene import Scene, View, load_scene
from .synth import SynthSpec, ground_truth_cloud, synthesize, write_scene

__version__ = "0.1.0"

__all__ = [
    "ABLATION_ROWS",
    "CameraModel",
    "DegenerateInputError",
    "DegeneratePlaneError",
    "DegenerateSupportError",
    "DepthNormalMap",
    "EmptyCloudError",
    "FormatError",
    "FusionConfig",
    "HpmSchedule",
    "HpmvsError",
    "Hypothesis",
    "InsufficientViewsError",
    "PointCloud",
    "PriorConfig",
    "PropagationConfig",
    "RunConfig",
    "Scene",
    "SceneRun",
    "SynthSpec",
    "View",
    "ViewRun",
    "build_prior_model",
    "dump_config",
    "evaluate",
    "extension_threshold",
    "fit_plane",
    "fuse",
    "ground_truth_cloud",
    "homography",
    "knn_support",
    "load_scene",
    "parse_config",
    "plane_from_hypothesis",
    "prior_assisted_cost",
    "random_init",
    "read_ply",
    "row_config",
    "run_iterations",
    "run_scene",
    "run_view",
    "set_workers",
    "synthesize",
    "write_ply",
    "write_scene",
    "__version__",
]
