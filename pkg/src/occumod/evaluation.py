"""Segmentation F1 and relative pose error, plus their CSV emitters.

Per-frame conventions: a frame where both masks are empty is skipped from
the sequence mean (F1 reported as NaN); a prediction miss or a false alarm
against an empty reference scores 0. The sequence mean averages F1 over
frames with a nonempty reference mask.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dataset_io import Trajectory, associate


@dataclass
class SegmentationScore:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    mean_f1: float


@dataclass
class RpeScore:
    delta: int
    trans_rmse: float
    rot_rmse_deg: float
    trans_errors: np.ndarray
    rot_errors_deg: np.ndarray


def f1_frame(pred, gt):
    """(precision, recall, F1) of one frame; NaNs when both masks are empty."""
    pred = np.asarray(pred) > 0
    gt = np.asarray(gt) > 0
    if pred.shape != gt.shape:
        raise ValueError("masks must share dimensions")
    tp = float(np.count_nonzero(pred & gt))
    fp = float(np.count_nonzero(pred & ~gt))
    fn = float(np.count_nonzero(~pred & gt))
    if tp + fp + fn == 0.0:
        return float("nan"), float("nan"), float("nan")
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def f1_sequence(frames) -> SegmentationScore:
    """Per-frame scores plus the mean F1 over frames with nonempty reference."""
    if not frames:
        raise ValueError("empty frame list")
    p, r, f = [], [], []
    in_mean = []
    for pred, gt in frames:
        pi, ri, fi = f1_frame(pred, gt)
        p.append(pi)
        r.append(ri)
        f.append(fi)
        in_mean.append(np.count_nonzero(np.asarray(gt) > 0) > 0)
    f_arr = np.array(f)
    sel = np.array(in_mean)
    mean = float(np.mean(f_arr[sel])) if sel.any() else float("nan")
    return SegmentationScore(precision=np.array(p), recall=np.array(r), f1=f_arr, mean_f1=mean)


def _rotation_angle_deg(R: np.ndarray) -> float:
    c = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.degrees(np.arccos(c)))


def rpe(estimated: Trajectory, reference: Trajectory, delta: int, assoc_tolerance: float = 0.02) -> RpeScore:
    """Relative pose error at a fixed frame offset.

    For every associated index i, E_i = inv(inv(Q_i) Q_{i+d}) (inv(P_i) P_{i+d})
    with Q the reference and P the estimate; the translational error is the
    norm of E_i's translation and the rotational error its rotation angle.
    Both are reported as RMSE over all pairs.
    """
    if delta < 0:
        raise ValueError("delta must be non-negative")
    pairs = associate(estimated.timestamps, reference.timestamps, assoc_tolerance)
    if len(pairs) <= delta:
        raise ValueError(
            f"insufficient trajectory length: {len(pairs)} associated poses for delta={delta}"
        )
    P = estimated.poses[[i for i, _ in pairs]]
    Q = reference.poses[[j for _, j in pairs]]
    trans = []
    rot = []
    for i in range(len(pairs) - delta):
        rel_q = np.linalg.inv(Q[i]) @ Q[i + delta]
        rel_p = np.linalg.inv(P[i]) @ P[i + delta]
        E = np.linalg.inv(rel_q) @ rel_p
        trans.append(np.linalg.norm(E[:3, 3]))
        rot.append(_rotation_angle_deg(E[:3, :3]))
    trans = np.array(trans)
    rot = np.array(rot)
    return RpeScore(
        delta=delta,
        trans_rmse=float(np.sqrt(np.mean(trans**2))),
        rot_rmse_deg=float(np.sqrt(np.mean(rot**2))),
        trans_errors=trans,
        rot_errors_deg=rot,
    )


def write_f1_csv(path, timestamps, score: SegmentationScore) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "precision", "recall", "f1"])
        for t, p, r, f in zip(timestamps, score.precision, score.recall, score.f1):
            writer.writerow([f"{t:.6f}", f"{p:.6f}", f"{r:.6f}", f"{f:.6f}"])
        writer.writerow(["mean", "", "", f"{score.mean_f1:.6f}"])


def write_rpe_csv(path, timestamps, score: RpeScore) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp_from", "timestamp_to", "trans_error_m", "rot_error_deg"])
        for i, (te, re) in enumerate(zip(score.trans_errors, score.rot_errors_deg)):
            writer.writerow(
                [
                    f"{timestamps[i]:.6f}",
                    f"{timestamps[i + score.delta]:.6f}",
                    f"{te:.9g}",
                    f"{re:.9g}",
                ]
            )
        writer.writerow(["rmse", "", f"{score.trans_rmse:.9g}", f"{score.rot_rmse_deg:.9g}"])
