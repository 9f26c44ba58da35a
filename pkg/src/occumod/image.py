"""Dense intensity/depth buffers, pyramids, and sub-pixel sampling.

Depth images are 2-D float arrays in meters where exactly 0 marks an
unmeasured pixel; intensity images are 2-D float arrays in [0, 1].
"""

from __future__ import annotations

import numpy as np

DEPTH_INVALID = 0.0
GRAY_WEIGHTS = (0.299, 0.587, 0.114)


def validate_depth_image(Z) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2:
        raise ValueError(f"depth image must be 2-D, got shape {Z.shape}")
    if not np.all(np.isfinite(Z)) or np.any(Z < 0):
        raise ValueError("depth values must be finite and >= 0 (0 = unmeasured)")
    return Z


def validate_intensity_image(I) -> np.ndarray:
    I = np.asarray(I, dtype=float)
    if I.ndim != 2:
        raise ValueError(f"intensity image must be 2-D, got shape {I.shape}")
    if np.any(I < 0) or np.any(I > 1):
        raise ValueError("intensity values must lie in [0, 1]")
    return I


def to_gray(rgb, weights=GRAY_WEIGHTS) -> np.ndarray:
    """Luminance conversion: per-pixel dot product with the channel weights."""
    rgb = np.asarray(rgb, dtype=float)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {rgb.shape}")
    return np.clip(rgb @ np.asarray(weights, dtype=float), 0.0, 1.0)


def _block_sum(a: np.ndarray) -> np.ndarray:
    # 2x2 block sums; ragged last row/column reduce over what is available.
    rows = np.arange(0, a.shape[0], 2)
    cols = np.arange(0, a.shape[1], 2)
    return np.add.reduceat(np.add.reduceat(a, rows, axis=0), cols, axis=1)


def downsample(intensity, depth):
    """Half-resolution level: intensity by 2x2 mean, depth by valid-only mean.

    A depth block with no valid sample stays unmeasured (0).
    """
    I = np.asarray(intensity, dtype=float)
    Z = np.asarray(depth, dtype=float)
    if I.shape != Z.shape:
        raise ValueError("intensity and depth must share dimensions")
    if min(I.shape) < 2:
        raise ValueError("image too small to downsample")
    count = _block_sum(np.ones(I.shape))
    I2 = _block_sum(I) / count
    valid = Z > 0
    vsum = _block_sum(np.where(valid, Z, 0.0))
    vcount = _block_sum(valid.astype(float))
    Z2 = np.where(vcount > 0, vsum / np.maximum(vcount, 1.0), DEPTH_INVALID)
    return I2, Z2


def downsample_background(B) -> np.ndarray:
    """Half-resolution background mask: any object pixel in a block -> object."""
    B = np.asarray(B)
    rows = np.arange(0, B.shape[0], 2)
    cols = np.arange(0, B.shape[1], 2)
    return np.minimum.reduceat(np.minimum.reduceat(B, rows, axis=0), cols, axis=1)


def build_pyramid(intensity, depth, levels: int):
    """List of (intensity, depth) pairs; level 0 is the input resolution."""
    if levels < 1:
        raise ValueError("pyramid needs at least one level")
    pyr = [(np.asarray(intensity, dtype=float), np.asarray(depth, dtype=float))]
    for _ in range(levels - 1):
        pyr.append(downsample(*pyr[-1]))
    return pyr


def _bilinear_corners(img: np.ndarray, x, y):
    h, w = img.shape[:2]
    inside = (x >= 0.0) & (x <= w - 1.0) & (y >= 0.0) & (y <= h - 1.0)
    xc = np.clip(x, 0.0, w - 1.0)
    yc = np.clip(y, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(xc).astype(np.intp), w - 2)
    y0 = np.minimum(np.floor(yc).astype(np.intp), h - 2)
    fx = xc - x0
    fy = yc - y0
    v00 = img[y0, x0]
    v01 = img[y0, x0 + 1]
    v10 = img[y0 + 1, x0]
    v11 = img[y0 + 1, x0 + 1]
    return inside, v00, v01, v10, v11, fx, fy


def sample_bilinear(img, x, y):
    """Bilinear sample; returns (values, valid). Invalid outside the window."""
    img = np.asarray(img, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    inside, v00, v01, v10, v11, fx, fy = _bilinear_corners(img, x, y)
    top = (1.0 - fx) * v00 + fx * v01
    bot = (1.0 - fx) * v10 + fx * v11
    val = np.where(inside, (1.0 - fy) * top + fy * bot, 0.0)
    return val, inside


def sample_bilinear_grad(img, x, y):
    """Bilinear sample plus its exact derivatives w.r.t. x and y.

    The returned gradients are the analytic derivatives of the interpolant,
    which keeps residual Jacobians consistent with finite differences of the
    sampled residuals.
    """
    img = np.asarray(img, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    inside, v00, v01, v10, v11, fx, fy = _bilinear_corners(img, x, y)
    top = (1.0 - fx) * v00 + fx * v01
    bot = (1.0 - fx) * v10 + fx * v11
    val = np.where(inside, (1.0 - fy) * top + fy * bot, 0.0)
    gx = np.where(inside, (1.0 - fy) * (v01 - v00) + fy * (v11 - v10), 0.0)
    gy = np.where(inside, bot - top, 0.0)
    return val, gx, gy, inside


def sample_depth_bilinear(Z, x, y):
    """Depth-aware bilinear sample: invalid if any corner is unmeasured.

    Mixing measured and unmeasured corners would fabricate depth across
    discontinuities, so the sample is conservative.
    """
    Z = np.asarray(Z, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    inside, v00, v01, v10, v11, fx, fy = _bilinear_corners(Z, x, y)
    valid = inside & (v00 > 0) & (v01 > 0) & (v10 > 0) & (v11 > 0)
    top = (1.0 - fx) * v00 + fx * v01
    bot = (1.0 - fx) * v10 + fx * v11
    val = np.where(valid, (1.0 - fy) * top + fy * bot, DEPTH_INVALID)
    return val, valid


def sample_depth_bilinear_grad(Z, x, y):
    """Depth sample with exact interpolant derivatives (see sample_bilinear_grad)."""
    Z = np.asarray(Z, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    inside, v00, v01, v10, v11, fx, fy = _bilinear_corners(Z, x, y)
    valid = inside & (v00 > 0) & (v01 > 0) & (v10 > 0) & (v11 > 0)
    top = (1.0 - fx) * v00 + fx * v01
    bot = (1.0 - fx) * v10 + fx * v11
    val = np.where(valid, (1.0 - fy) * top + fy * bot, DEPTH_INVALID)
    gx = np.where(valid, (1.0 - fy) * (v01 - v00) + fy * (v11 - v10), 0.0)
    gy = np.where(valid, bot - top, 0.0)
    return val, gx, gy, valid


def sample_nearest(img, x, y):
    """Nearest-neighbor sample; returns (values, valid)."""
    img = np.asarray(img)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    h, w = img.shape[:2]
    inside = (x >= 0.0) & (x <= w - 1.0) & (y >= 0.0) & (y <= h - 1.0)
    xi = np.clip(np.rint(x).astype(np.intp), 0, w - 1)
    yi = np.clip(np.rint(y).astype(np.intp), 0, h - 1)
    val = np.where(inside, img[yi, xi], 0)
    return val, inside
