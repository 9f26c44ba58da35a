"""Pinhole projection, SE(3) exponential/logarithm, and per-pixel warping.

Conventions used across the package:

* Camera frame: x right, y down, z forward (optical axis).
* Pixels are (x, y) = (column, row); the origin is the center of the
  top-left pixel, so the sampleable domain is [0, W-1] x [0, H-1].
* A twist is a length-6 vector [vx, vy, vz, wx, wy, wz] (translation
  first, rotation in radians second).
* Rigid transforms are 4x4 homogeneous matrices.
* The inter-frame twist ``xi`` used by warping maps points expressed in
  the *current* camera frame into the *previous* camera frame, i.e.
  exp(xi) = inv(W_prev) @ W_cur for world-from-camera poses W.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Below this rotation angle the closed-form SO(3)/SE(3) coefficients are
# replaced by their second-order Taylor expansions.
SMALL_ANGLE = 1e-8


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole model without distortion."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) must lie inside "
                f"the {self.width}x{self.height} image"
            )

    def scaled(self, level: int) -> "CameraIntrinsics":
        """Intrinsics of pyramid level ``level`` (half resolution per level).

        Pixel (0, 0) of a 2x2-block-averaged level is centered at (0.5, 0.5)
        of its parent, hence the (c + 0.5) * s - 0.5 principal-point rule.
        """
        s = 0.5 ** level
        return CameraIntrinsics(
            fx=self.fx * s,
            fy=self.fy * s,
            cx=(self.cx + 0.5) * s - 0.5,
            cy=(self.cy + 0.5) * s - 0.5,
            width=int(np.ceil(self.width * s)),
            height=int(np.ceil(self.height * s)),
        )

    def contains(self, x, y):
        """True where (x, y) lies inside the bilinear-sampleable domain."""
        return (x >= 0.0) & (x <= self.width - 1.0) & (y >= 0.0) & (y <= self.height - 1.0)


def validate_twist(xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (6,):
        raise ValueError(f"twist must have shape (6,), got {xi.shape}")
    if not np.all(np.isfinite(xi)):
        raise ValueError("twist entries must be finite")
    return xi


def is_rigid_transform(T, tol: float = 1e-9) -> bool:
    T = np.asarray(T, dtype=float)
    if T.shape != (4, 4):
        return False
    R = T[:3, :3]
    if not np.allclose(R.T @ R, np.eye(3), atol=tol):
        return False
    if abs(np.linalg.det(R) - 1.0) > tol:
        return False
    return bool(np.allclose(T[3], [0.0, 0.0, 0.0, 1.0], atol=tol))


def hat(w) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector."""
    wx, wy, wz = np.asarray(w, dtype=float)
    return np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])


def exp_so3(w) -> np.ndarray:
    """Rodrigues rotation from an axis-angle 3-vector."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    W = hat(w)
    W2 = W @ W
    if theta < SMALL_ANGLE:
        return np.eye(3) + W + 0.5 * W2
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * W + b * W2


def log_so3(R) -> np.ndarray:
    """Axis-angle of a rotation matrix; rejects angles within 1e-3 of pi."""
    R = np.asarray(R, dtype=float)
    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    if np.pi - theta < 1e-3:
        raise ValueError("near-singular logarithm: rotation angle within 1e-3 of pi")
    v = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < SMALL_ANGLE:
        return v
    return (theta / np.sin(theta)) * v


def exp_se3(xi) -> np.ndarray:
    """Closed-form SE(3) exponential of a twist [v, w]."""
    xi = validate_twist(xi)
    v, w = xi[:3], xi[3:]
    theta = np.linalg.norm(w)
    W = hat(w)
    W2 = W @ W
    if theta < SMALL_ANGLE:
        R = np.eye(3) + W + 0.5 * W2
        V = np.eye(3) + 0.5 * W + W2 / 6.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta**2
        c = (1.0 - a) / theta**2
        R = np.eye(3) + a * W + b * W2
        V = np.eye(3) + b * W + c * W2
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = V @ v
    return T


def log_se3(T) -> np.ndarray:
    """Inverse of exp_se3. Raises for rotation angles within 1e-3 of pi."""
    T = np.asarray(T, dtype=float)
    w = log_so3(T[:3, :3])
    theta = np.linalg.norm(w)
    W = hat(w)
    W2 = W @ W
    if theta < SMALL_ANGLE:
        Vinv = np.eye(3) - 0.5 * W + W2 / 12.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta**2
        Vinv = np.eye(3) - 0.5 * W + (1.0 - a / (2.0 * b)) / theta**2 * W2
    return np.concatenate([Vinv @ T[:3, 3], w])


def transform_points(T, points) -> np.ndarray:
    """Apply a 4x4 rigid transform to an array of 3-D points (..., 3)."""
    p = np.asarray(points, dtype=float)
    return p @ np.asarray(T)[:3, :3].T + np.asarray(T)[:3, 3]


def project(points, K: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of camera-frame points (..., 3) to pixels (..., 2)."""
    p = np.asarray(points, dtype=float)
    z = p[..., 2]
    if np.any(z <= 0):
        raise ValueError("behind camera: z <= 0")
    x = K.fx * p[..., 0] / z + K.cx
    y = K.fy * p[..., 1] / z + K.cy
    return np.stack([x, y], axis=-1)


def unproject(pixels, z, K: CameraIntrinsics) -> np.ndarray:
    """Back-project pixels (..., 2) with depths z (...) to camera-frame points."""
    u = np.asarray(pixels, dtype=float)
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise ValueError("invalid depth: z <= 0")
    x = (u[..., 0] - K.cx) * z / K.fx
    y = (u[..., 1] - K.cy) * z / K.fy
    return np.stack([x, y, z], axis=-1)


def pixel_grid(width: int, height: int):
    """Dense (x, y) coordinate grids, each of shape (height, width)."""
    x = np.arange(width, dtype=float)
    y = np.arange(height, dtype=float)
    return np.meshgrid(x, y)


@dataclass(frozen=True)
class WarpField:
    """Per-pixel warp of the current frame into the previous frame.

    ``x``/``y`` hold warped sub-pixel positions and ``z`` the transformed
    camera depth; all three are only meaningful where ``in_front`` is set.

    * ``has_depth``: the source pixel carries a valid (nonzero) depth;
    * ``in_front``: has_depth and the transformed point is in front of the
      previous camera;
    * ``inside``: in_front and the warped position lies inside the image
      window. Pixels with ``has_depth & ~inside`` form the newly discovered
      area (their warp exits the window). Pixels behind the camera are
      treated as out-of-frame.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    has_depth: np.ndarray
    in_front: np.ndarray
    inside: np.ndarray

    @property
    def new_area(self) -> np.ndarray:
        return self.has_depth & ~self.inside


def warp_grid(depth, xi, K: CameraIntrinsics) -> WarpField:
    """Warp every pixel of the current frame into the previous frame.

    Computes pi(exp(xi) * inv_pi(u, Z(u))) for every u with valid depth.
    """
    Z = np.asarray(depth, dtype=float)
    h, w = Z.shape
    if (w, h) != (K.width, K.height):
        raise ValueError(f"depth image {w}x{h} does not match intrinsics {K.width}x{K.height}")
    T = exp_se3(xi)
    gx, gy = pixel_grid(w, h)
    has_depth = Z > 0
    if np.array_equal(T, np.eye(4)):
        # zero twist: the warp is the identity map, keep it bit-exact
        return WarpField(x=gx, y=gy, z=Z, has_depth=has_depth, in_front=has_depth, inside=has_depth)
    zs = np.where(has_depth, Z, 1.0)
    px = (gx - K.cx) * zs / K.fx
    py = (gy - K.cy) * zs / K.fy
    R, t = T[:3, :3], T[:3, 3]
    qx = R[0, 0] * px + R[0, 1] * py + R[0, 2] * zs + t[0]
    qy = R[1, 0] * px + R[1, 1] * py + R[1, 2] * zs + t[1]
    qz = R[2, 0] * px + R[2, 1] * py + R[2, 2] * zs + t[2]
    in_front = has_depth & (qz > 0)
    qzs = np.where(in_front, qz, 1.0)
    wx = K.fx * qx / qzs + K.cx
    wy = K.fy * qy / qzs + K.cy
    inside = in_front & K.contains(wx, wy)
    return WarpField(x=wx, y=wy, z=qz, has_depth=has_depth, in_front=in_front, inside=inside)
