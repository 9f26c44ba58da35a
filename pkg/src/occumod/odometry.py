"""Dense visual odometry with a redescending bi-square loss.

The inter-frame twist is found by Levenberg-Marquardt over an image pyramid,
minimizing the sum over pixels of

    B(w(u, xi)) * [rho_kI(dI(u, xi)) + gamma * rho_kZ(dZ(u, xi))]

where dI(u, xi) = I_prev(w(u, xi)) - I_cur(u) and dZ mirrors it on depth,
and B is the background mask of the previous frame (0 = moving object).
Residuals beyond the bi-square threshold k have exactly zero influence,
which lets the optimizer settle on the background instead of a compromise
with outliers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import CameraIntrinsics, exp_se3, log_se3, pixel_grid
from .image import (
    build_pyramid,
    downsample_background,
    sample_bilinear_grad,
    sample_depth_bilinear_grad,
    sample_nearest,
)

MIN_CONTRIBUTING = 6


class DegenerateResidualError(RuntimeError):
    """Fewer contributing pixels than pose degrees of freedom."""

    def __init__(self, message: str, last_twist=None):
        super().__init__(message)
        self.last_twist = None if last_twist is None else np.asarray(last_twist, dtype=float)


@dataclass
class DvoParams:
    """Loss thresholds, pyramid size, and the LM damping schedule.

    ``k_intensity`` is in normalized gray units (48/255 for 8-bit data),
    ``k_depth`` in meters, ``gamma`` weights the depth term.
    """

    k_intensity: float = 48.0 / 255.0
    k_depth: float = 0.5
    gamma: float = 0.001
    pyramid_levels: int = 4
    max_iterations: int = 50
    lm_lambda_init: float = 1e-4
    lm_lambda_up: float = 10.0
    lm_lambda_down: float = 0.5
    convergence_eps: float = 1e-6
    warm_start: bool = True
    # The gating mask lags the objects by one frame; growing its object
    # region by this margin keeps freshly covered background out of the
    # residuals. Covers apparent object motion up to this many px/frame.
    mask_dilation_px: int = 8

    def __post_init__(self):
        if self.k_intensity <= 0 or self.k_depth <= 0:
            raise ValueError("bi-square thresholds must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.pyramid_levels < 1:
            raise ValueError("need at least one pyramid level")


def bisquare_rho(e, k: float):
    """Bi-square (Tukey) cost: saturates at k^2/6 for |e| > k."""
    if k <= 0:
        raise ValueError("threshold k must be positive")
    e = np.asarray(e, dtype=float)
    r = np.clip(1.0 - (e / k) ** 2, 0.0, None)
    return (k * k / 6.0) * (1.0 - r**3)


def bisquare_weight(e, k: float):
    """IRLS weight psi(e)/e = (1 - (e/k)^2)^2 inside, exactly 0 beyond k."""
    if k <= 0:
        raise ValueError("threshold k must be positive")
    e = np.asarray(e, dtype=float)
    r = np.clip(1.0 - (e / k) ** 2, 0.0, None)
    return r * r


@dataclass
class ResidualReport:
    """Per-pixel residuals / robust weights and the total robust cost.

    Grids hold 0 at non-contributing pixels; ``contributing`` marks pixels
    that entered the photometric term and ``depth_contributing`` those that
    also entered the depth term.
    """

    intensity_residual: np.ndarray
    depth_residual: np.ndarray
    intensity_weight: np.ndarray
    depth_weight: np.ndarray
    contributing: np.ndarray
    depth_contributing: np.ndarray
    cost: float
    num_contributing: int
    # one list of robust-cost values per pyramid level (coarse first);
    # non-increasing within a level across accepted LM steps
    cost_history: list = field(default_factory=list)


def _linearize(I_prev, Z_prev, I_cur, Z_cur, B_prev, T, K: CameraIntrinsics, params: DvoParams, need_jacobian: bool):
    """Evaluate residuals (and optionally their twist Jacobians) at pose T."""
    h, w = I_cur.shape
    gx, gy = pixel_grid(w, h)
    has = Z_cur > 0
    zs = np.where(has, Z_cur, 1.0)
    px = (gx - K.cx) * zs / K.fx
    py = (gy - K.cy) * zs / K.fy
    if np.array_equal(T, np.eye(4)):
        # zero twist: keep the warp bit-exact so residuals vanish identically
        X, Y, Zq = px, py, zs
        Zqs = zs
        wx, wy = gx, gy
        inside = has
    else:
        R, t = T[:3, :3], T[:3, 3]
        X = R[0, 0] * px + R[0, 1] * py + R[0, 2] * zs + t[0]
        Y = R[1, 0] * px + R[1, 1] * py + R[1, 2] * zs + t[1]
        Zq = R[2, 0] * px + R[2, 1] * py + R[2, 2] * zs + t[2]
        front = has & (Zq > 0)
        Zqs = np.where(front, Zq, 1.0)
        wx = K.fx * X / Zqs + K.cx
        wy = K.fy * Y / Zqs + K.cy
        inside = front & K.contains(wx, wy)

    if B_prev is not None:
        b, _ = sample_nearest(B_prev, wx, wy)
        gate = inside & (b > 0)
    else:
        gate = inside

    I_s, gIx, gIy, _ = sample_bilinear_grad(I_prev, wx, wy)
    Z_s, gZx, gZy, z_ok = sample_depth_bilinear_grad(Z_prev, wx, wy)
    valid_i = gate
    valid_z = gate & z_ok
    eI = np.where(valid_i, I_s - I_cur, 0.0)
    eZ = np.where(valid_z, Z_s - Z_cur, 0.0)

    result = {
        "valid_i": valid_i,
        "valid_z": valid_z,
        "eI": eI,
        "eZ": eZ,
        "warp_x": wx,
        "warp_y": wy,
        "count": int(valid_i.sum()),
    }
    result["cost"] = float(
        bisquare_rho(eI[valid_i], params.k_intensity).sum()
        + params.gamma * bisquare_rho(eZ[valid_z], params.k_depth).sum()
    )
    if not need_jacobian:
        return result

    # d(warped pixel)/d(3-D point) chained with d(exp(delta) q)/d(delta) at 0,
    # delta ordered [translation, rotation]
    inv_z = 1.0 / Zqs
    a = K.fx * inv_z
    b_ = K.fy * inv_z
    xn = X * inv_z
    yn = Y * inv_z
    Jwx = np.stack([a, np.zeros_like(a), -a * xn, -a * xn * Y, a * (Zq + X * xn), -a * Y], axis=-1)
    Jwy = np.stack([np.zeros_like(b_), b_, -b_ * yn, -b_ * (Zq + Y * yn), b_ * yn * X, b_ * X], axis=-1)
    result["JI"] = gIx[..., None] * Jwx + gIy[..., None] * Jwy
    result["JZ"] = gZx[..., None] * Jwx + gZy[..., None] * Jwy
    return result


def compute_residuals(frame_prev, frame_cur, xi, K: CameraIntrinsics, *, background=None, params: DvoParams | None = None) -> ResidualReport:
    """Residual report of a frame pair at a fixed twist."""
    params = params or DvoParams()
    I_prev, Z_prev = (np.asarray(a, dtype=float) for a in frame_prev)
    I_cur, Z_cur = (np.asarray(a, dtype=float) for a in frame_cur)
    T = exp_se3(xi)
    lin = _linearize(I_prev, Z_prev, I_cur, Z_cur, background, T, K, params, need_jacobian=False)
    if lin["count"] < MIN_CONTRIBUTING:
        raise DegenerateResidualError(
            f"degenerate residual system: {lin['count']} contributing pixels", last_twist=xi
        )
    wI = np.where(lin["valid_i"], bisquare_weight(lin["eI"], params.k_intensity), 0.0)
    wZ = np.where(lin["valid_z"], bisquare_weight(lin["eZ"], params.k_depth), 0.0)
    return ResidualReport(
        intensity_residual=lin["eI"],
        depth_residual=lin["eZ"],
        intensity_weight=wI,
        depth_weight=wZ,
        contributing=lin["valid_i"],
        depth_contributing=lin["valid_z"],
        cost=lin["cost"],
        num_contributing=lin["count"],
    )


def residual_jacobian(frame_prev, frame_cur, xi, K: CameraIntrinsics, *, background=None, params: DvoParams | None = None):
    """Stacked unweighted residual vector and its analytic twist Jacobian.

    Residuals are stacked as [all photometric; all depth] over contributing
    pixels; the Jacobian is taken w.r.t. a left-multiplied increment
    exp(delta) @ exp(xi). Returns (r, J, info) with the contributing masks
    and warped coordinates in ``info``.
    """
    params = params or DvoParams()
    I_prev, Z_prev = (np.asarray(a, dtype=float) for a in frame_prev)
    I_cur, Z_cur = (np.asarray(a, dtype=float) for a in frame_cur)
    lin = _linearize(I_prev, Z_prev, I_cur, Z_cur, background, exp_se3(xi), K, params, need_jacobian=True)
    vi, vz = lin["valid_i"], lin["valid_z"]
    r = np.concatenate([lin["eI"][vi], lin["eZ"][vz]])
    J = np.concatenate([lin["JI"][vi], lin["JZ"][vz]], axis=0)
    info = {
        "valid_i": vi,
        "valid_z": vz,
        "warp_x": lin["warp_x"],
        "warp_y": lin["warp_y"],
    }
    return r, J, info


def _refine_level(I_prev, Z_prev, I_cur, Z_cur, B_prev, T, K, params, history):
    lam = params.lm_lambda_init
    lin = _linearize(I_prev, Z_prev, I_cur, Z_cur, B_prev, T, K, params, need_jacobian=True)
    if lin["count"] < MIN_CONTRIBUTING:
        raise DegenerateResidualError(
            f"degenerate residual system: {lin['count']} contributing pixels",
            last_twist=log_se3(T),
        )
    cost = lin["cost"]
    if not np.isfinite(cost):
        raise RuntimeError("numerical failure: non-finite cost")
    history.append(cost)

    for _ in range(params.max_iterations):
        vi, vz = lin["valid_i"], lin["valid_z"]
        JI = lin["JI"][vi]
        JZ = lin["JZ"][vz]
        eI = lin["eI"][vi]
        eZ = lin["eZ"][vz]
        wI = bisquare_weight(eI, params.k_intensity)
        wZ = bisquare_weight(eZ, params.k_depth)
        H = JI.T @ (JI * wI[:, None]) + params.gamma * (JZ.T @ (JZ * wZ[:, None]))
        g = JI.T @ (wI * eI) + params.gamma * (JZ.T @ (wZ * eZ))

        accepted = False
        delta = None
        while lam <= 1e12:
            damped = H + lam * np.diag(np.diag(H))
            try:
                delta = np.linalg.solve(damped, -g)
            except np.linalg.LinAlgError:
                lam *= params.lm_lambda_up
                continue
            T_try = exp_se3(delta) @ T
            lin_try = _linearize(I_prev, Z_prev, I_cur, Z_cur, B_prev, T_try, K, params, need_jacobian=True)
            if (
                lin_try["count"] >= MIN_CONTRIBUTING
                and np.isfinite(lin_try["cost"])
                and lin_try["cost"] < cost
            ):
                T, lin, cost = T_try, lin_try, lin_try["cost"]
                lam = max(lam * params.lm_lambda_down, 1e-12)
                history.append(cost)
                accepted = True
                break
            lam *= params.lm_lambda_up
        if not accepted:
            break
        if np.linalg.norm(delta) < params.convergence_eps:
            break
    return T


def estimate_pose(frame_prev, frame_cur, K: CameraIntrinsics, *, background=None, xi_init=None, params: DvoParams | None = None):
    """Coarse-to-fine LM refinement of the inter-frame twist.

    ``frame_prev``/``frame_cur`` are (intensity, depth) pairs; ``background``
    is the previous frame's mask (1 = background), sampled at the warped
    location so moving-object pixels contribute nothing. Returns the twist
    (exp of which maps current-camera points into the previous camera) and
    the residual report at full resolution.
    """
    params = params or DvoParams()
    I_prev, Z_prev = (np.asarray(a, dtype=float) for a in frame_prev)
    I_cur, Z_cur = (np.asarray(a, dtype=float) for a in frame_cur)
    if I_prev.shape != I_cur.shape:
        raise ValueError("frames must share dimensions")

    pyr_prev = build_pyramid(I_prev, Z_prev, params.pyramid_levels)
    pyr_cur = build_pyramid(I_cur, Z_cur, params.pyramid_levels)
    masks = [None] * params.pyramid_levels
    if background is not None:
        B0 = np.asarray(background)
        if params.mask_dilation_px > 0 and (B0 == 0).any():
            grown = ndimage.binary_dilation(B0 == 0, iterations=params.mask_dilation_px)
            B0 = (~grown).astype(np.uint8)
        masks[0] = B0
        for lvl in range(1, params.pyramid_levels):
            masks[lvl] = downsample_background(masks[lvl - 1])

    T = exp_se3(np.zeros(6) if xi_init is None else xi_init)
    history: list = []
    for lvl in range(params.pyramid_levels - 1, -1, -1):
        Ip, Zp = pyr_prev[lvl]
        Ic, Zc = pyr_cur[lvl]
        level_history: list = []
        history.append(level_history)
        T = _refine_level(Ip, Zp, Ic, Zc, masks[lvl], T, K.scaled(lvl), params, level_history)

    xi = log_se3(T)
    report = compute_residuals((I_prev, Z_prev), (I_cur, Z_cur), xi, K, background=masks[0], params=params)
    report.cost_history = history
    return xi, report
