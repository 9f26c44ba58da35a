import json
import os

import numpy as np
import pytest

from occumod import cli
from occumod.dataset_io import read_depth_png, read_mask_png, read_trajectory
from occumod.occlusion import OcclusionParams
from occumod.odometry import DvoParams
from occumod.pipeline import RunConfig, load_manifest, parse_intrinsics, run
from occumod.synth import default_intrinsics, export_tum, render, standard_suites

SMALL_OCC = OcclusionParams(min_component_px=8)
SMALL_DVO = DvoParams(pyramid_levels=3)


def _small_config(out_dir, **kw):
    base = dict(
        out_dir=str(out_dir),
        suite="static_box",
        suite_width=64,
        suite_height=48,
        pose_mode="estimate",
        rpe_delta=10,
        occlusion=SMALL_OCC,
        dvo=SMALL_DVO,
    )
    base.update(kw)
    return RunConfig(**base)


def test_run_estimate_mode_outputs(tmp_path):
    res = run(_small_config(tmp_path / "out"))
    assert res.n_frames == 40
    assert res.segmentation.mean_f1 >= 0.9
    assert res.rpe.trans_rmse <= 0.02
    out = tmp_path / "out"
    assert (out / "trajectory.txt").exists()
    assert (out / "f1.csv").exists()
    assert (out / "rpe.csv").exists()
    assert (out / "manifest.json").exists()
    masks = sorted(os.listdir(out / "masks"))
    assert len(masks) == 40
    first = read_mask_png(out / "masks" / masks[0])
    assert first.sum() == 0  # bootstrap frame has an empty mask


def test_run_ground_truth_and_external_modes(tmp_path):
    res_gt = run(_small_config(tmp_path / "gt", pose_mode="ground-truth"))
    # external mode fed with the ground-truth trajectory must match
    res_ext = run(
        _small_config(
            tmp_path / "ext",
            pose_mode="external",
            ext_trajectory=str(tmp_path / "gt" / "trajectory.txt"),
        )
    )
    assert res_ext.segmentation.mean_f1 == pytest.approx(res_gt.segmentation.mean_f1, abs=1e-6)


def test_external_pose_never_markedly_worse(tmp_path):
    res_est = run(_small_config(tmp_path / "est"))
    run(_small_config(tmp_path / "gtrun", pose_mode="ground-truth"))
    res_ext = run(
        _small_config(
            tmp_path / "ext",
            pose_mode="external",
            ext_trajectory=str(tmp_path / "gtrun" / "trajectory.txt"),
        )
    )
    assert res_ext.segmentation.mean_f1 >= res_est.segmentation.mean_f1 - 0.02


def test_runs_are_byte_identical(tmp_path):
    run(_small_config(tmp_path / "a"))
    run(_small_config(tmp_path / "b"))
    for name in sorted(os.listdir(tmp_path / "a" / "masks")):
        a = (tmp_path / "a" / "masks" / name).read_bytes()
        b = (tmp_path / "b" / "masks" / name).read_bytes()
        assert a == b
    assert (tmp_path / "a" / "trajectory.txt").read_bytes() == (
        tmp_path / "b" / "trajectory.txt"
    ).read_bytes()


def test_manifest_reproduces_run(tmp_path):
    run(_small_config(tmp_path / "a"))
    cfg = load_manifest(tmp_path / "a" / "manifest.json")
    cfg.out_dir = str(tmp_path / "b")
    run(cfg)
    for name in sorted(os.listdir(tmp_path / "a" / "masks")):
        assert (tmp_path / "a" / "masks" / name).read_bytes() == (
            tmp_path / "b" / "masks" / name
        ).read_bytes()


def test_config_validation():
    with pytest.raises(ValueError, match="exactly one"):
        RunConfig(out_dir="x").validate()
    with pytest.raises(ValueError, match="exactly one"):
        RunConfig(out_dir="x", suite="toss", input_dir="y").validate()
    with pytest.raises(ValueError, match="unknown suite"):
        RunConfig(out_dir="x", suite="nope").validate()
    with pytest.raises(ValueError, match="ext-trajectory"):
        RunConfig(out_dir="x", suite="toss", pose_mode="external").validate()
    with pytest.raises(ValueError, match="intrinsics"):
        RunConfig(out_dir="x", input_dir="seq").validate()


def test_parse_intrinsics_inline_and_file(tmp_path):
    K = parse_intrinsics("260,260,159.5,119.5", 320, 240)
    assert K.fx == 260 and K.width == 320
    path = tmp_path / "intr.txt"
    path.write_text("52 52 31.5 23.5 64 48\n")
    K2 = parse_intrinsics(str(path), 0, 0)
    assert K2.width == 64 and K2.height == 48


def test_tum_round_trip_through_pipeline(tmp_path):
    # export a rendered suite in TUM layout, reload it, run ground-truth mode
    suite = standard_suites(64, 48)["static_box"]
    frames = render(suite)
    seq = tmp_path / "seq"
    export_tum(frames, suite.intrinsics, seq)

    # what was written decodes to what was rendered
    d = read_depth_png(seq / "depth" / "0.000000.png")
    assert np.abs(d - frames[0].depth).max() <= 0.5 / 5000.0
    gt = read_trajectory(seq / "groundtruth.txt")
    assert len(gt) == len(frames)

    cfg = RunConfig(
        out_dir=str(tmp_path / "out"),
        input_dir=str(seq),
        intrinsics=str(seq / "intrinsics.txt"),
        pose_mode="ground-truth",
        eval_gt_masks=str(seq / "mask"),
        rpe_delta=10,
        occlusion=SMALL_OCC,
        dvo=SMALL_DVO,
    )
    res = run(cfg)
    assert res.n_frames == len(frames)
    assert res.segmentation is not None
    assert res.segmentation.mean_f1 >= 0.85  # 8-bit quantization costs a little
    assert res.rpe.trans_rmse <= 1e-6


def test_cli_success_and_output(tmp_path, capsys):
    rc = cli.main(
        [
            "--suite",
            "static_box",
            "--pose-mode",
            "ground-truth",
            "--out",
            str(tmp_path / "out"),
            "--rpe-delta",
            "30",
        ]
    )
    assert rc == 0
    out = capsys.readouterr().out
    assert "mean F1" in out and "RPE" in out


def test_cli_config_error_exit_code(tmp_path, capsys):
    assert cli.main(["--out", str(tmp_path)]) == 1
    assert cli.main(["--suite", "nope", "--out", str(tmp_path)]) == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["--bogus-flag"])
    assert exc.value.code == 1


def test_cli_runtime_error_exit_code(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    rc = cli.main(
        ["--input", str(empty), "--intrinsics", "52,52,31.5,23.5", "--out", str(tmp_path / "out")]
    )
    assert rc == 2


def test_cli_empty_sequence_message(tmp_path, capsys):
    seq = tmp_path / "seq"
    seq.mkdir()
    (seq / "rgb.txt").write_text("0.0 rgb/a.png\n")
    (seq / "depth.txt").write_text("5.0 depth/a.png\n")
    rc = cli.main(
        ["--input", str(seq), "--intrinsics", "52,52,31.5,23.5", "--out", str(tmp_path / "out")]
    )
    assert rc == 2
    assert "empty sequence" in capsys.readouterr().err
