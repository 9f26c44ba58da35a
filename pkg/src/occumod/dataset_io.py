"""TUM-layout sequence loading, trajectory files, and PNG codecs.

Formats:

* ``rgb.txt`` / ``depth.txt``: lines of "timestamp filename", '#' comments.
* ``groundtruth.txt`` and any trajectory file: "timestamp tx ty tz qx qy qz qw",
  world-from-camera.
* depth PNG: 16-bit single channel, ``depth_scale`` counts per meter
  (default 5000, the TUM convention), count 0 = unmeasured.
* mask PNG: 8-bit single channel, nonzero = moving object.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass

import cv2
import numpy as np

from .geometry import exp_so3, log_so3

log = logging.getLogger(__name__)

DEFAULT_DEPTH_SCALE = 5000.0
DEFAULT_ASSOC_TOLERANCE = 0.02


@dataclass
class FrameRecord:
    timestamp: float
    rgb_path: str
    depth_path: str
    gt_pose: np.ndarray | None = None


@dataclass
class Trajectory:
    """Timestamped world-from-camera poses, strictly increasing in time."""

    timestamps: np.ndarray
    poses: np.ndarray  # (N, 4, 4)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        self.poses = np.asarray(self.poses, dtype=float)
        if len(self.timestamps) != len(self.poses):
            raise ValueError("timestamps and poses must have equal length")
        if len(self.timestamps) > 1 and not np.all(np.diff(self.timestamps) > 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.timestamps)


def read_file_list(path) -> list:
    """Parse "timestamp filename" lines; '#' starts a comment."""
    if not os.path.exists(path):
        raise IOError(f"missing index file: {path}")
    entries = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) < 2:
                raise ValueError(f"{path}:{lineno}: expected 'timestamp filename'")
            entries.append((float(parts[0]), parts[1]))
    return entries


def associate(times_a, times_b, tolerance: float) -> list:
    """Greedy nearest-timestamp matching of two sorted lists within tolerance.

    Candidate pairs are taken best-|dt| first with each index used at most
    once, so shrinking the tolerance never increases the number of pairs.
    """
    times_a = np.asarray(times_a, dtype=float)
    times_b = np.asarray(times_b, dtype=float)
    candidates = []
    for i, ta in enumerate(times_a):
        j = int(np.searchsorted(times_b, ta))
        for jj in (j - 1, j):
            if 0 <= jj < len(times_b):
                dt = abs(ta - times_b[jj])
                if dt <= tolerance:
                    candidates.append((dt, i, jj))
    candidates.sort()
    used_a: set = set()
    used_b: set = set()
    pairs = []
    for _, i, j in candidates:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairs.append((i, j))
    pairs.sort()
    return pairs


def load_sequence(root, assoc_tolerance: float = DEFAULT_ASSOC_TOLERANCE) -> list:
    """Load and associate a TUM-layout directory into FrameRecords."""
    rgb = sorted(read_file_list(os.path.join(root, "rgb.txt")))
    depth = sorted(read_file_list(os.path.join(root, "depth.txt")))
    pairs = associate([t for t, _ in rgb], [t for t, _ in depth], assoc_tolerance)
    if not pairs:
        raise ValueError(f"empty sequence: no rgb/depth pairs within {assoc_tolerance}s in {root}")
    dropped = len(rgb) + len(depth) - 2 * len(pairs)
    if dropped:
        log.warning("dropped %d unmatched index entries in %s", dropped, root)

    gt = None
    gt_path = os.path.join(root, "groundtruth.txt")
    if os.path.exists(gt_path):
        gt = read_trajectory(gt_path)

    records = []
    for i, j in pairs:
        t = rgb[i][0]
        pose = None
        if gt is not None and len(gt):
            k = int(np.argmin(np.abs(gt.timestamps - t)))
            if abs(gt.timestamps[k] - t) <= assoc_tolerance:
                pose = gt.poses[k]
        records.append(
            FrameRecord(
                timestamp=t,
                rgb_path=os.path.join(root, rgb[i][1]),
                depth_path=os.path.join(root, depth[j][1]),
                gt_pose=pose,
            )
        )
    return records


def read_depth_png(path, depth_scale: float = DEFAULT_DEPTH_SCALE) -> np.ndarray:
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise IOError(f"cannot read depth image: {path}")
    if raw.ndim != 2 or raw.dtype != np.uint16:
        raise ValueError(f"depth format error: {path} must be 16-bit single-channel PNG")
    return raw.astype(float) / depth_scale


def write_depth_png(path, depth, depth_scale: float = DEFAULT_DEPTH_SCALE) -> None:
    counts = np.rint(np.asarray(depth, dtype=float) * depth_scale)
    if np.any(counts < 0) or np.any(counts > 65535):
        raise ValueError("depth out of encodable range")
    if not cv2.imwrite(str(path), counts.astype(np.uint16)):
        raise IOError(f"cannot write {path}")


def read_rgb_png(path) -> np.ndarray:
    raw = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if raw is None:
        raise IOError(f"cannot read color image: {path}")
    return raw[:, :, ::-1].astype(float) / 255.0  # BGR -> RGB


def write_rgb_png(path, rgb) -> None:
    arr = np.clip(np.asarray(rgb, dtype=float), 0.0, 1.0)
    bgr = np.rint(arr[:, :, ::-1] * 255.0).astype(np.uint8)
    if not cv2.imwrite(str(path), bgr):
        raise IOError(f"cannot write {path}")


def read_mask_png(path) -> np.ndarray:
    raw = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if raw is None:
        raise IOError(f"cannot read mask image: {path}")
    return (raw > 0).astype(np.uint8)


def write_mask_png(path, mask) -> None:
    arr = (np.asarray(mask) > 0).astype(np.uint8) * 255
    if not cv2.imwrite(str(path), arr):
        raise IOError(f"cannot write {path}")


def quaternion_to_rotation(qx, qy, qz, qw) -> np.ndarray:
    x, y, z, w = qx, qy, qz, qw
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotation_to_quaternion(R) -> np.ndarray:
    """Quaternion (qx, qy, qz, qw) of a rotation matrix, qw >= 0."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        qw = 0.25 * s
        qx = (R[2, 1] - R[1, 2]) / s
        qy = (R[0, 2] - R[2, 0]) / s
        qz = (R[1, 0] - R[0, 1]) / s
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(R[i, i] - R[j, j] - R[k, k] + 1.0) * 2.0
        q = np.empty(4)
        q[i] = 0.25 * s
        q[3] = (R[k, j] - R[j, k]) / s
        q[j] = (R[j, i] + R[i, j]) / s
        q[k] = (R[k, i] + R[i, k]) / s
        qx, qy, qz, qw = q
    quat = np.array([qx, qy, qz, qw])
    if quat[3] < 0:
        quat = -quat
    return quat


def read_trajectory(path) -> Trajectory:
    """Parse a TUM trajectory file; quaternions are normalized on load."""
    if not os.path.exists(path):
        raise IOError(f"missing trajectory file: {path}")
    times = []
    poses = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 8:
                raise ValueError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
            try:
                t, tx, ty, tz, qx, qy, qz, qw = (float(p) for p in parts)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            norm = np.sqrt(qx * qx + qy * qy + qz * qz + qw * qw)
            if abs(norm - 1.0) > 1e-3:
                raise ValueError(f"{path}:{lineno}: quaternion norm {norm:.6f} deviates from 1")
            T = np.eye(4)
            T[:3, :3] = quaternion_to_rotation(qx / norm, qy / norm, qz / norm, qw / norm)
            T[:3, 3] = [tx, ty, tz]
            times.append(t)
            poses.append(T)
    return Trajectory(timestamps=np.array(times), poses=np.array(poses) if poses else np.zeros((0, 4, 4)))


def write_trajectory(traj: Trajectory, path) -> None:
    with open(path, "w") as fh:
        fh.write("# timestamp tx ty tz qx qy qz qw\n")
        for t, T in zip(traj.timestamps, traj.poses):
            q = rotation_to_quaternion(T[:3, :3])
            vals = [t, T[0, 3], T[1, 3], T[2, 3], q[0], q[1], q[2], q[3]]
            fh.write(" ".join(f"{v:.9g}" for v in vals) + "\n")


def pose_lookup(traj: Trajectory, t: float, max_gap: float = DEFAULT_ASSOC_TOLERANCE) -> np.ndarray:
    """Pose at time t: linear in translation, spherical-linear in rotation.

    Outside the covered range (beyond max_gap of the nearest sample) this
    signals missing coverage.
    """
    if len(traj) == 0:
        raise ValueError("no pose coverage: empty trajectory")
    times = traj.timestamps
    i = int(np.searchsorted(times, t))
    if i == 0 or i == len(times):
        k = 0 if i == 0 else len(times) - 1
        if abs(times[k] - t) > max_gap:
            raise ValueError(f"no pose coverage at t={t:.6f}")
        return traj.poses[k].copy()
    t0, t1 = times[i - 1], times[i]
    T0, T1 = traj.poses[i - 1], traj.poses[i]
    if min(abs(t - t0), abs(t1 - t)) > max_gap and (t1 - t0) > 2 * max_gap:
        raise ValueError(f"no pose coverage at t={t:.6f}: nearest samples too far")
    a = (t - t0) / (t1 - t0)
    T = np.eye(4)
    T[:3, 3] = (1.0 - a) * T0[:3, 3] + a * T1[:3, 3]
    R0 = T0[:3, :3]
    w = log_so3(R0.T @ T1[:3, :3])
    T[:3, :3] = R0 @ exp_so3(a * w)
    return T
