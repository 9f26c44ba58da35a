"""Moving-object detection by accumulating per-frame occlusion maps.

Per frame pair the previous depth image is compared against the current one
through the inter-frame warp; positive differences (depth got smaller) mark
occlusion by a moving object, and the running, warp-composed sum of those
differences plays the role of background subtraction without a background
model. Two quadratic depth-noise thresholds gate the accumulation, and
pixels whose warp exits the previous image window get their accumulation
predicted from adjoining known pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import CameraIntrinsics, WarpField, exp_se3, pixel_grid, warp_grid
from .image import DEPTH_INVALID, sample_bilinear, sample_depth_bilinear


@dataclass
class OcclusionParams:
    """Detection thresholds and post-processing knobs.

    ``alpha`` and ``beta`` are the quadratic coefficients (1/m) of the
    accumulation threshold tau_alpha(u) = alpha * Z(u)^2 and of the
    reappearance-reset threshold tau_beta(u) = beta * Z(u)^2. Depth sensor
    noise grows roughly quadratically with range; 0.02 keeps a 2x margin
    over typical structured-light noise.
    """

    alpha: float = 0.02
    beta: float = 0.02
    min_component_px: int = 200
    border_margin_px: int = 0
    connectivity: int = 4
    enable_prediction: bool = True
    # Disabling truncation turns the state into the raw accumulated sum;
    # useful for analysis, not for detection.
    enable_truncation: bool = True

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")
        if self.min_component_px < 0 or self.border_margin_px < 0:
            raise ValueError("pixel counts must be non-negative")
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")

    @property
    def label_structure(self) -> np.ndarray:
        if self.connectivity == 4:
            return np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
        return np.ones((3, 3), dtype=bool)


@dataclass
class AccumulationState:
    """Per-sequence detector state carried from frame to frame.

    ``A`` is the (truncated) occlusion accumulation in meters, ``B`` the
    background flags (1 = background, 0 = moving object), ``Z_prev`` the
    previous compensated depth and ``I_prev`` the previous intensity image.
    """

    A: np.ndarray
    B: np.ndarray
    Z_prev: np.ndarray
    I_prev: np.ndarray
    frame_index: int = 0

    @classmethod
    def initial(cls, intensity, depth) -> "AccumulationState":
        Z = np.asarray(depth, dtype=float)
        I = np.asarray(intensity, dtype=float)
        return cls(
            A=np.zeros(Z.shape),
            B=np.ones(Z.shape, dtype=np.uint8),
            Z_prev=Z,
            I_prev=I,
            frame_index=0,
        )

    @property
    def object_mask(self) -> np.ndarray:
        return (1 - self.B).astype(np.uint8)


def occlusion_map(Z_prev, Z_cur, xi, K: CameraIntrinsics, *, warp: WarpField | None = None):
    """Per-pixel depth difference: warped previous depth minus current depth.

    Returns (dz, valid, new_area). ``dz`` is zero where ``valid`` is unset:
    at pixels with unmeasured current depth, where the warped sample is
    unmeasured, or where the warp leaves the previous image window.
    ``new_area`` flags valid-depth pixels whose warp exits the window.
    """
    Z_prev = np.asarray(Z_prev, dtype=float)
    Z_cur = np.asarray(Z_cur, dtype=float)
    if Z_prev.shape != Z_cur.shape:
        raise ValueError("depth images must share dimensions")
    if warp is None:
        warp = warp_grid(Z_cur, xi, K)
    sample, sample_valid = sample_depth_bilinear(Z_prev, warp.x, warp.y)
    valid = warp.inside & sample_valid
    dz = np.where(valid, sample - Z_cur, 0.0)
    return dz, valid, warp.new_area


def accumulate(A_prev, dz, dz_valid, Z_cur, xi, K: CameraIntrinsics, *, warp: WarpField | None = None) -> np.ndarray:
    """Next accumulation: dz plus the warped previous (truncated) accumulation.

    The warped sample is taken by bilinear interpolation and contributes 0
    where the warp exits the window. Pixels without current depth cannot be
    warped at all; they carry the previous accumulation at the same pixel so
    sensor dropouts do not erase detected objects.
    """
    A_prev = np.asarray(A_prev, dtype=float)
    Z_cur = np.asarray(Z_cur, dtype=float)
    if warp is None:
        warp = warp_grid(Z_cur, xi, K)
    sampled, ok = sample_bilinear(A_prev, warp.x, warp.y)
    carried = np.where(warp.inside & ok, sampled, 0.0)
    A = np.where(dz_valid, dz, 0.0) + carried
    return np.where(warp.has_depth, A, A_prev)


def truncate(A, dz, dz_valid, Z_cur, params: OcclusionParams) -> np.ndarray:
    """Zero the accumulation below the noise threshold or on strong reappearance.

    A(u) <= tau_alpha(u) kills sub-noise accumulation and negative drift;
    dz(u) <= -tau_beta(u) resets pixels where the background reappears.
    """
    Z_cur = np.asarray(Z_cur, dtype=float)
    A = np.asarray(A, dtype=float)
    tau_alpha = params.alpha * Z_cur**2
    tau_beta = params.beta * Z_cur**2
    out = A.copy()
    out[A <= tau_alpha] = 0.0
    out[np.asarray(dz_valid) & (np.asarray(dz) <= -tau_beta)] = 0.0
    return out


def background_mask(A, Z_cur, params: OcclusionParams) -> np.ndarray:
    """Background flags: 0 where accumulation exceeds tau_alpha, 1 otherwise.

    Object components smaller than ``min_component_px`` are suppressed back
    to background, and a ``border_margin_px`` band is never labeled.
    """
    A = np.asarray(A, dtype=float)
    Z_cur = np.asarray(Z_cur, dtype=float)
    if A.shape != Z_cur.shape:
        raise ValueError("accumulation and depth must share dimensions")
    obj = A > params.alpha * Z_cur**2
    if params.min_component_px > 0 and obj.any():
        labels, n = ndimage.label(obj, structure=params.label_structure)
        if n:
            counts = np.bincount(labels.ravel())
            small = counts < params.min_component_px
            small[0] = False
            obj &= ~small[labels]
    m = params.border_margin_px
    if m > 0:
        obj[:m, :] = False
        obj[-m:, :] = False
        obj[:, :m] = False
        obj[:, -m:] = False
    return (~obj).astype(np.uint8)


def compensate_depth(Z_cur, Z_prev, xi, K: CameraIntrinsics) -> np.ndarray:
    """Fill unmeasured current pixels from the previous depth image.

    The correspondence of the backward warp cannot be evaluated at pixels
    whose own depth is missing, so the previous depth image is splatted
    forward into the current frame (nearest-surface wins via a z-buffer on
    the transformed depth) and unmeasured pixels take the previous depth
    value found there. Measured pixels are never overwritten.
    """
    Z_cur = np.asarray(Z_cur, dtype=float)
    Z_prev = np.asarray(Z_prev, dtype=float)
    if Z_cur.shape != Z_prev.shape:
        raise ValueError("depth images must share dimensions")
    missing = Z_cur == DEPTH_INVALID
    if not missing.any():
        return Z_cur.copy()
    valid_prev = Z_prev > 0
    if not valid_prev.any():
        return Z_cur.copy()

    h, w = Z_cur.shape
    T = np.linalg.inv(exp_se3(xi))  # previous-camera -> current-camera
    gx, gy = pixel_grid(w, h)
    z = Z_prev[valid_prev]
    px = (gx[valid_prev] - K.cx) * z / K.fx
    py = (gy[valid_prev] - K.cy) * z / K.fy
    R, t = T[:3, :3], T[:3, 3]
    qx = R[0, 0] * px + R[0, 1] * py + R[0, 2] * z + t[0]
    qy = R[1, 0] * px + R[1, 1] * py + R[1, 2] * z + t[1]
    qz = R[2, 0] * px + R[2, 1] * py + R[2, 2] * z + t[2]
    front = qz > 0
    if not front.any():
        return Z_cur.copy()
    wx = K.fx * qx[front] / qz[front] + K.cx
    wy = K.fy * qy[front] / qz[front] + K.cy
    zc = qz[front]
    value = z[front]

    # splat each projected point onto its nearest integer pixel; ties between
    # sources resolve to the surface nearest the current camera
    xr = np.rint(wx).astype(np.intp)
    yr = np.rint(wy).astype(np.intp)
    ok = (xr >= 0) & (xr < w) & (yr >= 0) & (yr < h)
    flat = yr[ok] * w + xr[ok]
    zc_ok = zc[ok]
    val_ok = value[ok]
    zbuf = np.full(h * w, np.inf)
    np.minimum.at(zbuf, flat, zc_ok)
    filled = np.zeros(h * w)
    sel = zc_ok <= zbuf[flat]
    filled[flat[sel]] = val_ok[sel]

    out = Z_cur.copy()
    fill_here = missing & (zbuf < np.inf).reshape(h, w)
    out[fill_here] = filled.reshape(h, w)[fill_here]
    return out


def _neighbor(a: np.ndarray, dy: int, dx: int, fill) -> np.ndarray:
    """Value of the (dy, dx)-offset neighbor at each pixel."""
    out = np.full(a.shape, fill, dtype=a.dtype)
    h, w = a.shape
    ys = slice(max(dy, 0), h + min(dy, 0))
    xs = slice(max(dx, 0), w + min(dx, 0))
    yd = slice(max(-dy, 0), h + min(-dy, 0))
    xd = slice(max(-dx, 0), w + min(-dx, 0))
    out[yd, xd] = a[ys, xs]
    return out


_OFFSETS = ((1, 0), (-1, 0), (0, 1), (0, -1))


def predict_new_area(A, Z_cur, new_area, params: OcclusionParams) -> np.ndarray:
    """Fill the accumulation over newly discovered pixels by front propagation.

    Sweeping from the known-region boundary outward, each frontier pixel
    receives the average over its already-known 4-neighbors n of
    A(n) + Z(u) - Z(n); predicted pixels join the known set for the next
    sweep. Afterwards any predicted above-threshold component that does not
    touch a pre-existing object component is cleared to stop errors from
    propagating into later frames.
    """
    A = np.asarray(A, dtype=float).copy()
    Z_cur = np.asarray(Z_cur, dtype=float)
    new_area = np.asarray(new_area, dtype=bool)
    if not new_area.any():
        return A

    tau = params.alpha * Z_cur**2
    known = ~new_area
    known_obj = known & (A > tau)
    remaining = new_area & (Z_cur > 0)
    usable = known & (Z_cur > 0)
    while remaining.any():
        total = np.zeros(A.shape)
        count = np.zeros(A.shape)
        for dy, dx in _OFFSETS:
            n_ok = _neighbor(usable, dy, dx, False)
            n_av = _neighbor(np.where(usable, A - Z_cur, 0.0), dy, dx, 0.0)
            total += n_av
            count += n_ok
        frontier = remaining & (count > 0)
        if not frontier.any():
            break  # pockets with no valid-depth path stay at their prior value
        A[frontier] = total[frontier] / count[frontier] + Z_cur[frontier]
        remaining &= ~frontier
        usable |= frontier

    predicted_obj = new_area & (A > tau)
    if predicted_obj.any():
        structure = params.label_structure
        labels, n = ndimage.label(predicted_obj, structure=structure)
        if n:
            touch = ndimage.binary_dilation(known_obj, structure=structure) & predicted_obj
            keep = np.zeros(n + 1, dtype=bool)
            keep[np.unique(labels[touch])] = True
            keep[0] = False
            A[predicted_obj & ~keep[labels]] = 0.0
    return A


@dataclass
class StepDiagnostics:
    """Intermediate grids of one detector update, for inspection and tests."""

    dz: np.ndarray
    dz_valid: np.ndarray
    new_area: np.ndarray
    compensated_depth: np.ndarray


def step(
    state: AccumulationState,
    intensity,
    depth,
    xi,
    K: CameraIntrinsics,
    params: OcclusionParams | None = None,
    *,
    diagnostics: bool = False,
):
    """Advance the detector by one frame.

    ``xi`` maps current-camera points into the previous camera frame (the
    pose the odometry estimates). Order per frame: depth compensation,
    occlusion map, accumulation, new-area prediction, truncation,
    background masking. Returns (new_state, object_mask) where the mask is
    uint8 with 1 on moving objects.
    """
    params = params or OcclusionParams()
    I_cur = np.asarray(intensity, dtype=float)
    Z_raw = np.asarray(depth, dtype=float)
    if Z_raw.shape != state.Z_prev.shape:
        raise ValueError("frame dimensions changed mid-sequence")

    Z_cur = compensate_depth(Z_raw, state.Z_prev, xi, K)
    warp = warp_grid(Z_cur, xi, K)
    dz, dz_valid, new_area = occlusion_map(state.Z_prev, Z_cur, xi, K, warp=warp)
    A = accumulate(state.A, dz, dz_valid, Z_cur, xi, K, warp=warp)
    if params.enable_prediction:
        A = predict_new_area(A, Z_cur, new_area, params)
    if params.enable_truncation:
        A = truncate(A, dz, dz_valid, Z_cur, params)
    B = background_mask(A, Z_cur, params)
    if params.enable_truncation:
        # keep A and B consistent: suppressed/unlabeled pixels carry no occlusion
        A = np.where(B == 0, A, 0.0)

    new_state = AccumulationState(
        A=A, B=B, Z_prev=Z_cur, I_prev=I_cur, frame_index=state.frame_index + 1
    )
    mask = new_state.object_mask
    if diagnostics:
        return new_state, mask, StepDiagnostics(dz, dz_valid, new_area, Z_cur)
    return new_state, mask
