"""End-to-end runs: detection + odometry over a sequence, with artifacts.

Per frame, the inter-frame pose is obtained (estimated by masked DVO, or
composed from an external / ground-truth trajectory), then the detector
state advances and the object mask is written. Odometry for the pair
(i, i+1) is gated by the mask of frame i, the latest one available; the
first frame bootstraps with an all-background mask and an empty
accumulation. Outputs: masks/<timestamp>.png, trajectory.txt, f1.csv,
rpe.csv, and manifest.json describing the run.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import dataset_io, evaluation, occlusion, odometry, synth
from .dataset_io import Trajectory
from .geometry import CameraIntrinsics, exp_se3, log_se3
from .image import to_gray

POSE_MODES = ("estimate", "external", "ground-truth")


class PipelineError(RuntimeError):
    pass


@dataclass
class RunConfig:
    out_dir: str
    input_dir: str | None = None
    suite: str | None = None
    suite_width: int = 320
    suite_height: int = 240
    pose_mode: str = "estimate"
    ext_trajectory: str | None = None
    intrinsics: str | None = None  # file path or "fx,fy,cx,cy"
    depth_scale: float = dataset_io.DEFAULT_DEPTH_SCALE
    assoc_tolerance: float = dataset_io.DEFAULT_ASSOC_TOLERANCE
    eval_gt_masks: str | None = None
    eval_f1: bool = True
    eval_rpe: bool = True
    rpe_delta: int = 150
    seed: int = 0
    occlusion: occlusion.OcclusionParams = field(default_factory=occlusion.OcclusionParams)
    dvo: odometry.DvoParams = field(default_factory=odometry.DvoParams)

    def validate(self) -> None:
        if (self.input_dir is None) == (self.suite is None):
            raise ValueError("exactly one of input_dir and suite must be set")
        if self.suite is not None and self.suite not in synth.SUITE_BUILDERS:
            raise ValueError(f"unknown suite '{self.suite}' (have: {sorted(synth.SUITE_BUILDERS)})")
        if self.pose_mode not in POSE_MODES:
            raise ValueError(f"pose_mode must be one of {POSE_MODES}")
        if self.pose_mode == "external" and not self.ext_trajectory:
            raise ValueError("external pose mode needs --ext-trajectory")
        if self.input_dir is not None and self.intrinsics is None:
            raise ValueError("TUM input needs an intrinsics source")


@dataclass
class FrameData:
    """One sequence frame; images load lazily to keep long runs in memory."""

    timestamp: float
    images: object  # callable -> (intensity, depth)
    gt_pose: np.ndarray | None = None
    gt_mask: object | None = None  # callable -> uint8 mask


@dataclass
class RunResult:
    out_dir: str
    n_frames: int
    trajectory: Trajectory
    segmentation: evaluation.SegmentationScore | None = None
    rpe: evaluation.RpeScore | None = None


def parse_intrinsics(source: str, width: int, height: int) -> CameraIntrinsics:
    """Intrinsics from "fx,fy,cx,cy" or a whitespace file (fx fy cx cy [w h])."""
    if os.path.exists(source):
        vals = [float(v) for v in open(source).read().split()]
    else:
        vals = [float(v) for v in source.split(",")]
    if len(vals) == 6:
        width, height = int(vals[4]), int(vals[5])
    elif len(vals) != 4:
        raise ValueError("intrinsics need 4 values fx,fy,cx,cy (or 6 with width,height)")
    return CameraIntrinsics(fx=vals[0], fy=vals[1], cx=vals[2], cy=vals[3], width=width, height=height)


def _tum_image_loader(rgb_path, depth_path, depth_scale):
    def load():
        rgb = dataset_io.read_rgb_png(rgb_path)
        return to_gray(rgb), dataset_io.read_depth_png(depth_path, depth_scale)

    return load


def _load_tum_frames(config: RunConfig):
    records = dataset_io.load_sequence(config.input_dir, config.assoc_tolerance)
    first_depth = dataset_io.read_depth_png(records[0].depth_path, config.depth_scale)
    h, w = first_depth.shape
    K = parse_intrinsics(config.intrinsics, w, h)

    mask_index = None
    if config.eval_gt_masks:
        stamps = []
        paths = []
        for name in sorted(os.listdir(config.eval_gt_masks)):
            if name.endswith(".png"):
                try:
                    stamps.append(float(os.path.splitext(name)[0]))
                except ValueError:
                    continue
                paths.append(os.path.join(config.eval_gt_masks, name))
        mask_index = (np.array(stamps), paths)

    frames = []
    for rec in records:
        gt_mask = None
        if mask_index is not None and len(mask_index[0]):
            k = int(np.argmin(np.abs(mask_index[0] - rec.timestamp)))
            if abs(mask_index[0][k] - rec.timestamp) <= config.assoc_tolerance:
                path = mask_index[1][k]
                gt_mask = lambda p=path: dataset_io.read_mask_png(p)
        frames.append(
            FrameData(
                timestamp=rec.timestamp,
                images=_tum_image_loader(rec.rgb_path, rec.depth_path, config.depth_scale),
                gt_pose=rec.gt_pose,
                gt_mask=gt_mask,
            )
        )
    return frames, K


def _load_suite_frames(config: RunConfig):
    spec = synth.standard_suites(config.suite_width, config.suite_height)[config.suite]
    rendered = synth.render(spec)
    frames = [
        FrameData(
            timestamp=fr.timestamp,
            images=lambda fr=fr: (fr.intensity, fr.depth),
            gt_pose=fr.camera_pose,
            gt_mask=lambda fr=fr: fr.mask,
        )
        for fr in rendered
    ]
    return frames, spec.intrinsics


def relative_twist(pose_prev: np.ndarray, pose_cur: np.ndarray) -> np.ndarray:
    """Twist whose exp maps current-camera points into the previous camera."""
    return log_se3(np.linalg.inv(pose_prev) @ pose_cur)


def run(config: RunConfig) -> RunResult:
    config.validate()
    os.makedirs(config.out_dir, exist_ok=True)
    masks_dir = os.path.join(config.out_dir, "masks")
    os.makedirs(masks_dir, exist_ok=True)

    if config.suite is not None:
        frames, K = _load_suite_frames(config)
    else:
        frames, K = _load_tum_frames(config)
    if not frames:
        raise PipelineError("empty sequence")

    ext_traj = None
    if config.pose_mode == "external":
        ext_traj = dataset_io.read_trajectory(config.ext_trajectory)
    if config.pose_mode == "ground-truth" and any(f.gt_pose is None for f in frames):
        raise PipelineError("ground-truth pose mode requires poses for every frame")

    def mask_path(t: float) -> str:
        return os.path.join(masks_dir, f"{t:.6f}.png")

    I0, Z0 = frames[0].images()
    state = occlusion.AccumulationState.initial(I0, Z0)
    world = frames[0].gt_pose.copy() if frames[0].gt_pose is not None else np.eye(4)
    est_times = [frames[0].timestamp]
    est_poses = [world.copy()]
    dataset_io.write_mask_png(mask_path(frames[0].timestamp), state.object_mask)

    last_xi = np.zeros(6)
    for idx in range(1, len(frames)):
        cur = frames[idx]
        stage = "load"
        try:
            I_cur, Z_cur = cur.images()
            stage = "pose"
            if config.pose_mode == "estimate":
                xi_init = last_xi if config.dvo.warm_start else np.zeros(6)
                xi, _ = odometry.estimate_pose(
                    (state.I_prev, state.Z_prev),
                    (I_cur, Z_cur),
                    K,
                    background=state.B,
                    xi_init=xi_init,
                    params=config.dvo,
                )
            elif config.pose_mode == "external":
                prev_t = frames[idx - 1].timestamp
                xi = relative_twist(
                    dataset_io.pose_lookup(ext_traj, prev_t, config.assoc_tolerance),
                    dataset_io.pose_lookup(ext_traj, cur.timestamp, config.assoc_tolerance),
                )
            else:
                xi = relative_twist(frames[idx - 1].gt_pose, cur.gt_pose)
            stage = "detection"
            state, mask = occlusion.step(state, I_cur, Z_cur, xi, K, config.occlusion)
        except Exception as exc:
            raise PipelineError(f"frame {idx} ({stage}): {exc}") from exc

        last_xi = xi
        world = world @ exp_se3(xi)
        est_times.append(cur.timestamp)
        est_poses.append(world.copy())
        dataset_io.write_mask_png(mask_path(cur.timestamp), mask)

    trajectory = Trajectory(timestamps=np.array(est_times), poses=np.array(est_poses))
    dataset_io.write_trajectory(trajectory, os.path.join(config.out_dir, "trajectory.txt"))

    seg = None
    if config.eval_f1 and all(f.gt_mask is not None for f in frames):
        pairs = [
            (dataset_io.read_mask_png(mask_path(f.timestamp)), f.gt_mask()) for f in frames
        ]
        seg = evaluation.f1_sequence(pairs)
        evaluation.write_f1_csv(os.path.join(config.out_dir, "f1.csv"), est_times, seg)

    rpe_score = None
    if config.eval_rpe and all(f.gt_pose is not None for f in frames):
        gt_traj = Trajectory(
            timestamps=np.array([f.timestamp for f in frames]),
            poses=np.array([f.gt_pose for f in frames]),
        )
        if len(frames) > config.rpe_delta:
            rpe_score = evaluation.rpe(trajectory, gt_traj, config.rpe_delta, config.assoc_tolerance)
            evaluation.write_rpe_csv(os.path.join(config.out_dir, "rpe.csv"), est_times, rpe_score)

    save_manifest(config, os.path.join(config.out_dir, "manifest.json"))
    return RunResult(
        out_dir=config.out_dir,
        n_frames=len(frames),
        trajectory=trajectory,
        segmentation=seg,
        rpe=rpe_score,
    )


def save_manifest(config: RunConfig, path) -> None:
    import cv2
    import scipy

    from . import __version__

    payload = {
        "config": dataclasses.asdict(config),
        "versions": {
            "occumod": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "opencv": cv2.__version__,
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def load_manifest(path) -> RunConfig:
    """Rebuild a RunConfig from a manifest written by save_manifest."""
    with open(path) as fh:
        payload = json.load(fh)
    cfg = payload["config"]
    occ = occlusion.OcclusionParams(**cfg.pop("occlusion"))
    dvo = odometry.DvoParams(**cfg.pop("dvo"))
    return RunConfig(occlusion=occ, dvo=dvo, **cfg)
