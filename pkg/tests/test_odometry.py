import numpy as np
import pytest

from occumod.geometry import exp_se3
from occumod.odometry import (
    DegenerateResidualError,
    DvoParams,
    bisquare_rho,
    bisquare_weight,
    compute_residuals,
    estimate_pose,
    residual_jacobian,
)
from occumod.pipeline import relative_twist
from occumod.synth import Body, Plane, SceneSpec, default_intrinsics, render

K = default_intrinsics(64, 48)
SMALL = DvoParams(pyramid_levels=3)


def _scene(camera_poses, plane_z=2.0, extra_bodies=()):
    # feature wavelengths of tens of pixels keep the bilinear interpolation
    # bias far below the noise-free cost bound while leaving the 6-DOF
    # system well-conditioned
    return SceneSpec(
        intrinsics=K,
        camera_poses=np.asarray(camera_poses, dtype=float),
        bodies=[
            Body(shape=Plane(point=(0, 0, plane_z), normal=(0, 0, -1)), texture_seed=3, texture_scale=2.0, texture_contrast=0.35),
            *extra_bodies,
        ],
    )


def _pair(xi_cam):
    """Two frames: camera at identity, then displaced by exp(xi_cam)."""
    poses = np.stack([np.eye(4), exp_se3(xi_cam)])
    frames = render(_scene(poses))
    prev = (frames[0].intensity, frames[0].depth)
    cur = (frames[1].intensity, frames[1].depth)
    xi_true = relative_twist(frames[0].camera_pose, frames[1].camera_pose)
    return prev, cur, xi_true


# ------------------------------------------------------------------ loss pieces


def test_rho_zero_and_plateau():
    k = 48.0 / 255.0
    assert bisquare_rho(0.0, k) == 0.0
    plateau = k * k / 6.0
    for e in (k + 1e-12, 2 * k, 100.0, -5.0):
        assert bisquare_rho(e, k) == pytest.approx(plateau, abs=0.0)
    # continuity at the cutoff
    assert bisquare_rho(k, k) == pytest.approx(plateau, abs=1e-18)


def test_rho_even_monotone():
    k = 0.5
    e = np.linspace(0, 2 * k, 200)
    vals = bisquare_rho(e, k)
    assert np.all(np.diff(vals) >= -1e-15)
    assert np.allclose(bisquare_rho(-e, k), vals)


def test_weight_values():
    k = 0.2
    assert bisquare_weight(0.0, k) == 1.0
    assert bisquare_weight(k / 2, k) == pytest.approx(0.5625, abs=1e-15)
    assert bisquare_weight(k + 1e-12, k) == 0.0
    assert bisquare_weight(-3 * k, k) == 0.0
    w = bisquare_weight(np.linspace(-2, 2, 101), k)
    assert np.all((w >= 0) & (w <= 1))


def test_rho_derivative_matches_finite_differences():
    # d rho / d e = e * weight(e); relative error vs central differences
    k = 48.0 / 255.0
    e = np.linspace(-2 * k, 2 * k, 401)
    analytic = e * bisquare_weight(e, k)
    eps = 1e-7
    fd = (bisquare_rho(e + eps, k) - bisquare_rho(e - eps, k)) / (2 * eps)
    scale = np.abs(analytic).max()
    assert np.max(np.abs(analytic - fd)) / scale <= 1e-6


def test_rho_derivative_vanishes_beyond_cutoff():
    k = 0.3
    e = k * (1 + 1e-9)
    assert e * bisquare_weight(e, k) == 0.0


# -------------------------------------------------------------------- residuals


def test_residuals_identical_frames_zero():
    rng = np.random.default_rng(0)
    I = rng.uniform(0.2, 0.8, size=(K.height, K.width))
    Z = rng.uniform(1.0, 3.0, size=(K.height, K.width))
    rep = compute_residuals((I, Z), (I, Z), np.zeros(6), K)
    assert rep.cost == 0.0
    assert np.all(rep.intensity_residual == 0.0)
    assert np.all(rep.depth_residual == 0.0)
    assert rep.num_contributing == K.width * K.height


def test_residuals_all_masked_degenerate():
    I = np.full((K.height, K.width), 0.5)
    Z = np.full((K.height, K.width), 2.0)
    B = np.zeros((K.height, K.width), dtype=np.uint8)
    with pytest.raises(DegenerateResidualError) as exc:
        compute_residuals((I, Z), (I, Z), np.zeros(6), K, background=B)
    assert np.allclose(exc.value.last_twist, 0.0)


def test_residuals_cost_ordering_at_true_pose():
    prev, cur, xi_true = _pair([0.02, -0.01, 0.005, 0.002, -0.004, 0.003])
    rep_true = compute_residuals(prev, cur, xi_true, K)
    rep_zero = compute_residuals(prev, cur, np.zeros(6), K)
    assert rep_true.cost < rep_zero.cost
    assert rep_true.cost < 1e-6 * rep_true.num_contributing


def test_residuals_masked_pixels_contribute_nothing():
    prev, cur, xi_true = _pair([0.01, 0.0, 0.0, 0.0, 0.0, 0.0])
    B = np.ones((K.height, K.width), dtype=np.uint8)
    B[:, :20] = 0
    rep_full = compute_residuals(prev, cur, xi_true, K)
    rep_masked = compute_residuals(prev, cur, xi_true, K, background=B)
    assert rep_masked.num_contributing < rep_full.num_contributing
    assert np.all(rep_masked.intensity_residual[~rep_masked.contributing] == 0.0)
    assert np.all(rep_masked.intensity_weight[~rep_masked.contributing] == 0.0)
    r, _, _ = residual_jacobian(prev, cur, xi_true, K, background=B)
    assert len(r) == rep_masked.num_contributing + rep_masked.depth_contributing.sum()


def test_residuals_intensity_shift_equivariance():
    prev, cur, xi_true = _pair([0.015, 0.0, 0.0, 0.0, 0.0, 0.002])
    rep = compute_residuals(prev, cur, xi_true, K)
    shift = 0.02
    rep_shifted = compute_residuals(
        (prev[0] + shift, prev[1]), (cur[0] + shift, cur[1]), xi_true, K
    )
    assert np.allclose(rep_shifted.intensity_residual, rep.intensity_residual, atol=1e-12)


def test_weight_report_invariant():
    prev, cur, _ = _pair([0.03, 0.01, 0.0, 0.0, 0.0, 0.01])
    rep = compute_residuals(prev, cur, np.zeros(6), K)
    sel = rep.contributing
    over = np.abs(rep.intensity_residual[sel]) > DvoParams().k_intensity
    assert np.all(rep.intensity_weight[sel][over] == 0.0)
    assert np.all((rep.intensity_weight >= 0) & (rep.intensity_weight <= 1))


# --------------------------------------------------------------------- jacobian


def jacobian_fd_relative_error(prev, cur, xi, K_, eps=1e-6, boundary_margin=1e-3):
    """Relative Frobenius error of the analytic Jacobian vs central FD.

    Rows whose base warp lands within ``boundary_margin`` of a bilinear cell
    boundary are excluded: the sampled residual is not differentiable there,
    so finite differences are meaningless for those pixels.
    """
    from occumod.geometry import log_se3

    r0, J, info = residual_jacobian(prev, cur, xi, K_)
    vi, vz = info["valid_i"], info["valid_z"]
    fx = info["warp_x"] - np.floor(info["warp_x"])
    fy = info["warp_y"] - np.floor(info["warp_y"])
    interior = (
        np.minimum(np.minimum(fx, 1 - fx), np.minimum(fy, 1 - fy)) > boundary_margin
    )
    rows = np.concatenate([interior[vi], interior[vz]])

    fd = np.zeros_like(J)
    base_T = exp_se3(xi)
    for a in range(6):
        d = np.zeros(6)
        d[a] = eps
        xp = log_se3(exp_se3(d) @ base_T)
        xm = log_se3(exp_se3(-d) @ base_T)
        lp = _restricted_residuals(prev, cur, xp, vi, vz)
        lm = _restricted_residuals(prev, cur, xm, vi, vz)
        fd[:, a] = (lp - lm) / (2 * eps)
    return np.linalg.norm((J - fd)[rows]) / np.linalg.norm(fd[rows])


def test_jacobian_matches_finite_differences():
    prev, cur, xi_true = _pair([0.01, -0.008, 0.004, 0.003, -0.002, 0.004])
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(10):
        xi = xi_true + rng.normal(scale=0.01, size=6)
        worst = max(worst, jacobian_fd_relative_error(prev, cur, xi, K))
    assert worst <= 1e-4, f"relative Frobenius error {worst:.2e}"


def _restricted_residuals(prev, cur, xi, vi, vz):
    """Residuals at xi evaluated on a fixed pixel set (the base twist's)."""
    from occumod.odometry import _linearize

    params = DvoParams()
    lin = _linearize(
        np.asarray(prev[0], float),
        np.asarray(prev[1], float),
        np.asarray(cur[0], float),
        np.asarray(cur[1], float),
        None,
        exp_se3(xi),
        K,
        params,
        need_jacobian=False,
    )
    return np.concatenate([lin["eI"][vi], lin["eZ"][vz]])


# -------------------------------------------------------------- pose estimation


def test_estimate_identity_on_identical_frames():
    rng = np.random.default_rng(1)
    I = rng.uniform(0.2, 0.8, size=(K.height, K.width))
    Z = rng.uniform(1.0, 3.0, size=(K.height, K.width))
    xi, rep = estimate_pose((I, Z), (I, Z), K, params=SMALL)
    assert np.allclose(xi, 0.0, atol=1e-12)
    assert rep.cost == 0.0


@pytest.mark.parametrize(
    "xi_cam",
    [
        [0.02, 0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.015, -0.01, 0.0, 0.0, 0.0],
        [0.01, -0.005, 0.0, 0.004, 0.006, -0.003],
        [0.0, 0.0, 0.0, 0.0, 0.012, 0.0],
    ],
)
def test_estimate_recovers_true_motion(xi_cam):
    prev, cur, xi_true = _pair(xi_cam)
    xi, rep = estimate_pose(prev, cur, K, params=SMALL)
    assert np.abs(xi[:3] - xi_true[:3]).max() < 1e-3
    assert np.abs(xi[3:] - xi_true[3:]).max() < 1e-3


def test_estimate_cost_non_increasing_per_level():
    prev, cur, _ = _pair([0.02, 0.01, 0.0, 0.0, 0.005, 0.01])
    _, rep = estimate_pose(prev, cur, K, params=SMALL)
    assert rep.cost_history, "expected recorded LM history"
    for level_hist in rep.cost_history:
        diffs = np.diff(level_hist)
        assert np.all(diffs <= 1e-12)


def test_estimate_warm_start_converges_from_offset():
    prev, cur, xi_true = _pair([0.025, 0.0, 0.01, 0.0, 0.008, 0.0])
    xi, _ = estimate_pose(prev, cur, K, xi_init=xi_true * 0.5, params=SMALL)
    assert np.abs(xi - xi_true).max() < 1e-3


def test_estimate_conditioning_of_normal_equations():
    # seeded texture must keep the 6-DOF system well-conditioned
    prev, cur, xi_true = _pair([0.01, 0.0, 0.0, 0.0, 0.0, 0.0])
    _, J, _ = residual_jacobian(prev, cur, xi_true, K)
    s = np.linalg.svd(J.T @ J, compute_uv=False)
    assert s[-1] > 1e-6 * s[0]
