import os

import numpy as np
import pytest

from occumod.dataset_io import (
    Trajectory,
    associate,
    load_sequence,
    pose_lookup,
    quaternion_to_rotation,
    read_depth_png,
    read_mask_png,
    read_rgb_png,
    read_trajectory,
    rotation_to_quaternion,
    write_depth_png,
    write_mask_png,
    write_rgb_png,
    write_trajectory,
)
from occumod.geometry import exp_se3


def test_depth_png_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    counts = rng.integers(0, 65536, size=(24, 32)).astype(np.uint16)
    depth = counts.astype(float) / 5000.0
    path = tmp_path / "d.png"
    write_depth_png(path, depth)
    back = read_depth_png(path)
    assert np.array_equal(np.rint(back * 5000.0).astype(np.uint16), counts)
    assert np.array_equal(back, depth)


def test_depth_scale_values(tmp_path):
    path = tmp_path / "d.png"
    write_depth_png(path, np.array([[1.0, 0.0, 13.107]]), 5000.0)
    back = read_depth_png(path, 5000.0)
    assert back[0, 0] == pytest.approx(1.0)
    assert back[0, 1] == 0.0
    assert back[0, 2] == pytest.approx(65535 / 5000.0)


def test_depth_png_wrong_format(tmp_path):
    path = tmp_path / "bad.png"
    write_mask_png(path, np.ones((4, 4)))  # 8-bit file
    with pytest.raises(ValueError, match="bad.png"):
        read_depth_png(path)


def test_rgb_and_mask_round_trip(tmp_path):
    rgb = np.random.default_rng(1).uniform(size=(8, 8, 3))
    write_rgb_png(tmp_path / "c.png", rgb)
    back = read_rgb_png(tmp_path / "c.png")
    assert np.abs(back - rgb).max() <= 0.5 / 255.0 + 1e-9

    mask = np.zeros((8, 8), dtype=np.uint8)
    mask[2:4, 2:4] = 1
    write_mask_png(tmp_path / "m.png", mask)
    assert np.array_equal(read_mask_png(tmp_path / "m.png"), mask)


def test_quaternion_round_trip():
    rng = np.random.default_rng(2)
    for _ in range(50):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        R = quaternion_to_rotation(*q)
        q2 = rotation_to_quaternion(R)
        assert np.allclose(R, quaternion_to_rotation(*q2), atol=1e-12)
        assert np.allclose(np.abs(q @ q2), 1.0, atol=1e-12)


def _make_trajectory(n=5, seed=3):
    rng = np.random.default_rng(seed)
    poses = np.array([exp_se3(rng.normal(scale=0.3, size=6)) for _ in range(n)])
    return Trajectory(timestamps=np.arange(n, dtype=float) * 0.1, poses=poses)


def test_trajectory_requires_increasing_timestamps():
    poses = np.broadcast_to(np.eye(4), (2, 4, 4)).copy()
    with pytest.raises(ValueError, match="increasing"):
        Trajectory(timestamps=np.array([1.0, 1.0]), poses=poses)


def test_trajectory_round_trip(tmp_path):
    traj = _make_trajectory()
    path = tmp_path / "traj.txt"
    write_trajectory(traj, path)
    back = read_trajectory(path)
    assert np.allclose(back.timestamps, traj.timestamps, atol=1e-9)
    assert np.allclose(back.poses, traj.poses, atol=1e-7)


def test_trajectory_identity_line(tmp_path):
    path = tmp_path / "t.txt"
    path.write_text("# comment\n0.0 0 0 0 0 0 0 1\n")
    traj = read_trajectory(path)
    assert len(traj) == 1
    assert np.allclose(traj.poses[0], np.eye(4))


def test_trajectory_bad_quaternion(tmp_path):
    path = tmp_path / "t.txt"
    path.write_text("0.0 0 0 0 0 0 0 0.5\n")
    with pytest.raises(ValueError, match="norm"):
        read_trajectory(path)


def test_trajectory_malformed_line_number(tmp_path):
    path = tmp_path / "t.txt"
    path.write_text("0.0 0 0 0 0 0 0 1\n0.1 0 0 oops 0 0 0 1\n")
    with pytest.raises(ValueError, match=":2"):
        read_trajectory(path)


def test_empty_trajectory_file(tmp_path):
    traj = Trajectory(timestamps=np.zeros(0), poses=np.zeros((0, 4, 4)))
    path = tmp_path / "empty.txt"
    write_trajectory(traj, path)
    assert read_trajectory(path).timestamps.size == 0
    assert path.read_text().startswith("#")


def test_trajectory_line_counts(tmp_path):
    one = Trajectory(timestamps=np.array([0.0]), poses=np.eye(4)[None])
    write_trajectory(one, tmp_path / "one.txt")
    lines = [l for l in (tmp_path / "one.txt").read_text().splitlines() if not l.startswith("#")]
    assert lines == ["0 0 0 0 0 0 0 1"]

    three = _make_trajectory(3)
    write_trajectory(three, tmp_path / "three.txt")
    lines = [l for l in (tmp_path / "three.txt").read_text().splitlines() if not l.startswith("#")]
    assert len(lines) == 3
    assert [float(l.split()[0]) for l in lines] == sorted(three.timestamps.tolist())


def test_associate_basics():
    pairs = associate([0.0, 1.0, 2.0], [0.0, 1.0, 2.0], 0.02)
    assert pairs == [(0, 0), (1, 1), (2, 2)]
    assert associate([0.0], [0.015], 0.02) == [(0, 0)]
    assert associate([0.0, 1.0], [0.05, 1.05], 0.02) == []


def test_associate_monotone_in_tolerance():
    rng = np.random.default_rng(4)
    a = np.sort(rng.uniform(0, 10, size=40))
    b = np.sort(rng.uniform(0, 10, size=40))
    counts = [len(associate(a, b, tol)) for tol in (0.5, 0.2, 0.1, 0.05, 0.01)]
    assert all(c1 >= c2 for c1, c2 in zip(counts, counts[1:]))


def test_pose_lookup_exact_and_midpoints():
    poses = np.array([np.eye(4), exp_se3([2.0, 0, 0, 0, 0, 0])])
    traj = Trajectory(timestamps=np.array([0.0, 1.0]), poses=poses)
    assert np.allclose(pose_lookup(traj, 0.0), np.eye(4))
    mid = pose_lookup(traj, 0.5, max_gap=1.0)
    assert np.allclose(mid[:3, 3], [1.0, 0.0, 0.0], atol=1e-12)

    rot = np.array([np.eye(4), exp_se3([0, 0, 0, 0, 0, np.pi / 2])])
    traj_rot = Trajectory(timestamps=np.array([0.0, 1.0]), poses=rot)
    mid_rot = pose_lookup(traj_rot, 0.5, max_gap=1.0)
    expected = exp_se3([0, 0, 0, 0, 0, np.pi / 4])
    assert np.allclose(mid_rot, expected, atol=1e-9)


def test_pose_lookup_out_of_range():
    traj = _make_trajectory()
    with pytest.raises(ValueError, match="no pose coverage"):
        pose_lookup(traj, 99.0, max_gap=0.02)


def _write_sequence(tmp_path, rgb_times, depth_times):
    os.makedirs(tmp_path / "rgb", exist_ok=True)
    os.makedirs(tmp_path / "depth", exist_ok=True)
    with open(tmp_path / "rgb.txt", "w") as fh:
        fh.write("# rgb index\n")
        for t in rgb_times:
            name = f"rgb/{t:.6f}.png"
            write_rgb_png(tmp_path / name, np.full((4, 4, 3), 0.5))
            fh.write(f"{t:.6f} {name}\n")
    with open(tmp_path / "depth.txt", "w") as fh:
        fh.write("# depth index\n")
        for t in depth_times:
            name = f"depth/{t:.6f}.png"
            write_depth_png(tmp_path / name, np.full((4, 4), 1.0))
            fh.write(f"{t:.6f} {name}\n")


def test_load_sequence_associates(tmp_path):
    _write_sequence(tmp_path, [0.0, 0.1, 0.2], [0.003, 0.102, 0.199])
    records = load_sequence(tmp_path, 0.02)
    assert len(records) == 3
    assert [r.timestamp for r in records] == [0.0, 0.1, 0.2]


def test_load_sequence_offset_too_large(tmp_path):
    _write_sequence(tmp_path, [0.0, 0.1], [0.05, 0.15])
    with pytest.raises(ValueError, match="empty sequence"):
        load_sequence(tmp_path, 0.02)


def test_load_sequence_missing_index(tmp_path):
    with pytest.raises(IOError, match="rgb.txt"):
        load_sequence(tmp_path, 0.02)


def test_load_sequence_attaches_gt_pose(tmp_path):
    _write_sequence(tmp_path, [0.0, 0.1], [0.0, 0.1])
    write_trajectory(_make_trajectory(2), tmp_path / "groundtruth.txt")
    # trajectory timestamps 0.0, 0.1 match exactly
    records = load_sequence(tmp_path, 0.02)
    assert records[0].gt_pose is not None
    assert records[1].gt_pose is not None
