"""camcue: multi-view geometry toolkit and dataset-curation CLI.

Modules:

* :mod:`camcue.geometry` - pinhole camera and SE(3) primitives.
* :mod:`camcue.plucker` - pixel-aligned Plucker ray maps and tokenization.
* :mod:`camcue.fusion` - pose-aware token fusion, query-attention pose head,
  losses, and analytic gradients.
* :mod:`camcue.demo` - the toy trainer exercising the full head end to end.
* :mod:`camcue.selection` - depth-based-visibility view-group selection.
* :mod:`camcue.metrics` - thresholded SE(3) pose-accuracy reports.
* :mod:`camcue.synthetic` - analytic box scenes (the geometric oracle).
* :mod:`camcue.dataio` - file formats and scene-directory ingestion.
* :mod:`camcue.cli` - the ``camcue`` command-line driver.
"""

from .errors import CamcueError
from .geometry import (
    CameraIntrinsics,
    CameraPose,
    DepthMap,
    PoseDecomposition,
    RawPose,
    back_project,
    decompose,
    orthonormalize,
    pose_compose,
    pose_inverse,
    project,
    rotation_geodesic_deg,
)
from .plucker import EmbedParams, PatchConfig, RayMap, TokenGrid, patchify_embed, ray_map, resize_ray_map
from .fusion import (
    AdapterConfig,
    AdapterParams,
    FusionParams,
    LossConfig,
    adapter_forward,
    fuse,
    grad_check,
    pose_loss,
    total_loss,
)
from .demo import TrainDemoConfig, TrainingReport, train_adapter_demo
from .selection import (
    Frame,
    SampleSet,
    SelectionConfig,
    ViewGroup,
    build_groups,
    greedy_select,
    pose_filter,
    redundant,
    select_groups,
    target_samples,
    visibility,
)
from .metrics import PoseAccuracyReport, PoseErrorSample, accuracy_report, pose_errors
from .synthetic import Box, Scene, Trajectory, make_scene, oracle_visibility, render_depth, sample_trajectory

__version__ = "0.1.0"

__all__ = [
    "CamcueError",
    "CameraIntrinsics", "CameraPose", "DepthMap", "PoseDecomposition", "RawPose",
    "back_project", "decompose", "orthonormalize", "pose_compose", "pose_inverse",
    "project", "rotation_geodesic_deg",
    "EmbedParams", "PatchConfig", "RayMap", "TokenGrid",
    "patchify_embed", "ray_map", "resize_ray_map",
    "AdapterConfig", "AdapterParams", "FusionParams", "LossConfig",
    "adapter_forward", "fuse", "grad_check", "pose_loss", "total_loss",
    "TrainDemoConfig", "TrainingReport", "train_adapter_demo",
    "Frame", "SampleSet", "SelectionConfig", "ViewGroup",
    "build_groups", "greedy_select", "pose_filter", "redundant",
    "select_groups", "target_samples", "visibility",
    "PoseAccuracyReport", "PoseErrorSample", "accuracy_report", "pose_errors",
    "Box", "Scene", "Trajectory", "make_scene", "oracle_visibility",
    "render_depth", "sample_trajectory",
]
