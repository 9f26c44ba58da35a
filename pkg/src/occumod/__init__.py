"""Occlusion-accumulation moving-object detection for RGB-D sequences."""

__version__ = "0.1.0"

from .geometry import CameraIntrinsics, exp_se3, log_se3, project, unproject, warp_grid
from .image import build_pyramid, sample_bilinear, to_gray
from .occlusion import AccumulationState, OcclusionParams
from .odometry import DvoParams, ResidualReport, estimate_pose
from .pipeline import RunConfig, run

__all__ = [
    "CameraIntrinsics",
    "exp_se3",
    "log_se3",
    "project",
    "unproject",
    "warp_grid",
    "build_pyramid",
    "sample_bilinear",
    "to_gray",
    "AccumulationState",
    "OcclusionParams",
    "DvoParams",
    "ResidualReport",
    "estimate_pose",
    "RunConfig",
    "run",
]
