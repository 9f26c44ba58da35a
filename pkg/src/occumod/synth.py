"""Deterministic synthetic RGB-D renderer with exact poses and object masks.

Scenes are analytic (planes, boxes, spheres; no meshes): per pixel the ray
through the pixel center is intersected with every body in closed form and
the nearest hit wins. Textures are smooth seeded cosine fields evaluated in
body-local coordinates, so photo-consistency holds exactly across views.
Depth is the camera-frame z of the hit, which makes the renderer an
independent oracle for warping and odometry.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .geometry import CameraIntrinsics

_NEAR_CLIP = 1e-3


@dataclass(frozen=True)
class Plane:
    """Infinite plane through ``point`` with unit ``normal`` (local coords)."""

    point: tuple = (0.0, 0.0, 0.0)
    normal: tuple = (0.0, 0.0, -1.0)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box of extents ``size`` centered at the local origin."""

    size: tuple = (0.3, 0.3, 0.3)


@dataclass(frozen=True)
class Sphere:
    radius: float = 0.15


@dataclass
class Body:
    """A shape with a per-frame rigid trajectory and a procedural texture."""

    shape: object
    poses: np.ndarray | None = None  # (frames, 4, 4) world-from-body; None = identity
    moving: bool = False
    texture_seed: int = 0
    texture_scale: float = 0.25  # base feature wavelength, meters
    texture_contrast: float = 0.35
    brightness: float = 0.5

    def pose(self, frame: int) -> np.ndarray:
        if self.poses is None:
            return np.eye(4)
        return self.poses[frame]


@dataclass
class DepthNoise:
    """Gaussian depth noise with std sigma_coeff * Z^2 plus dropout."""

    sigma_coeff: float = 0.0
    dropout_prob: float = 0.0


@dataclass
class SceneSpec:
    intrinsics: CameraIntrinsics
    camera_poses: np.ndarray  # (frames, 4, 4) world-from-camera
    bodies: list
    noise: DepthNoise | None = None
    seed: int = 0
    fps: float = 30.0

    @property
    def frames(self) -> int:
        return len(self.camera_poses)


@dataclass
class RenderedFrame:
    timestamp: float
    intensity: np.ndarray
    depth: np.ndarray
    mask: np.ndarray  # uint8, 1 = moving object
    camera_pose: np.ndarray  # world-from-camera


def _texture(points: np.ndarray, body: Body) -> np.ndarray:
    """Smooth seeded cosine field over body-local coordinates."""
    rng = np.random.default_rng(body.texture_seed)
    n_waves = 6
    dirs = rng.normal(size=(n_waves, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    freqs = (2.0 * np.pi / body.texture_scale) * np.geomspace(0.5, 3.0, n_waves)
    phases = rng.uniform(0.0, 2.0 * np.pi, n_waves)
    amps = 0.55 ** np.arange(n_waves)
    amps *= body.texture_contrast / amps.sum()
    val = np.full(points.shape[:-1], body.brightness)
    for j in range(n_waves):
        val += amps[j] * np.cos(freqs[j] * (points @ dirs[j]) + phases[j])
    return np.clip(val, 0.02, 0.98)


def _intersect(shape, origin: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """Smallest ray parameter t > near-clip per pixel; inf where missed.

    ``origin`` is (3,), ``direction`` (h, w, 3), both in the shape's local
    frame. t is shared across frames of reference, so depth = t when
    direction has unit camera-z.
    """
    if isinstance(shape, Plane):
        n = np.asarray(shape.normal, dtype=float)
        denom = direction @ n
        num = (np.asarray(shape.point, dtype=float) - origin) @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = num / denom
        t = np.where(np.abs(denom) > 1e-12, t, np.inf)
        return np.where(t > _NEAR_CLIP, t, np.inf)

    if isinstance(shape, Box):
        half = 0.5 * np.asarray(shape.size, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / direction
        t1 = (-half - origin) * inv
        t2 = (half - origin) * inv
        t_near = np.minimum(t1, t2).max(axis=-1)
        t_far = np.maximum(t1, t2).min(axis=-1)
        hit = (t_far >= t_near) & (t_far > _NEAR_CLIP)
        t = np.where(t_near > _NEAR_CLIP, t_near, t_far)
        return np.where(hit, t, np.inf)

    if isinstance(shape, Sphere):
        a = np.sum(direction * direction, axis=-1)
        b = 2.0 * (direction @ origin)
        c = origin @ origin - shape.radius**2
        disc = b * b - 4.0 * a * c
        sq = np.sqrt(np.maximum(disc, 0.0))
        t0 = (-b - sq) / (2.0 * a)
        t1 = (-b + sq) / (2.0 * a)
        t = np.where(t0 > _NEAR_CLIP, t0, t1)
        return np.where((disc >= 0) & (t > _NEAR_CLIP), t, np.inf)

    raise TypeError(f"unsupported shape {type(shape).__name__}")


def _camera_inside(shape, origin: np.ndarray) -> bool:
    if isinstance(shape, Box):
        return bool(np.all(np.abs(origin) < 0.5 * np.asarray(shape.size)))
    if isinstance(shape, Sphere):
        return bool(origin @ origin < shape.radius**2)
    return False


def render_frame(spec: SceneSpec, frame: int) -> RenderedFrame:
    K = spec.intrinsics
    W = spec.camera_poses[frame]
    gx, gy = np.meshgrid(np.arange(K.width, dtype=float), np.arange(K.height, dtype=float))
    d_cam = np.stack([(gx - K.cx) / K.fx, (gy - K.cy) / K.fy, np.ones_like(gx)], axis=-1)
    o_world = W[:3, 3]
    d_world = d_cam @ W[:3, :3].T

    best_t = np.full((K.height, K.width), np.inf)
    intensity = np.full((K.height, K.width), 0.0)
    mask = np.zeros((K.height, K.width), dtype=np.uint8)
    for body in spec.bodies:
        P = body.pose(frame)
        Rb, tb = P[:3, :3], P[:3, 3]
        o_local = Rb.T @ (o_world - tb)
        if _camera_inside(body.shape, o_local):
            raise ValueError(f"degenerate viewpoint: camera inside a body at frame {frame}")
        d_local = d_world @ Rb
        t = _intersect(body.shape, o_local, d_local)
        closer = t < best_t
        if closer.any():
            ts = np.where(np.isfinite(t), t, 0.0)
            pts = o_local + ts[..., None] * d_local
            tex = _texture(pts, body)
            intensity = np.where(closer, tex, intensity)
            mask = np.where(closer, np.uint8(body.moving), mask)
            best_t = np.where(closer, t, best_t)

    depth = np.where(np.isfinite(best_t), best_t, 0.0)
    if spec.noise is not None and (spec.noise.sigma_coeff > 0 or spec.noise.dropout_prob > 0):
        rng = np.random.default_rng((spec.seed + 1) * 1_000_003 + frame)
        valid = depth > 0
        if spec.noise.sigma_coeff > 0:
            depth = np.where(valid, depth + rng.normal(size=depth.shape) * spec.noise.sigma_coeff * depth**2, 0.0)
            depth = np.maximum(depth, 0.0)
        if spec.noise.dropout_prob > 0:
            drop = rng.uniform(size=depth.shape) < spec.noise.dropout_prob
            depth = np.where(drop, 0.0, depth)
    return RenderedFrame(
        timestamp=frame / spec.fps,
        intensity=intensity,
        depth=depth,
        mask=mask,
        camera_pose=W.copy(),
    )


def render(spec: SceneSpec) -> list:
    return [render_frame(spec, f) for f in range(spec.frames)]


def default_intrinsics(width: int = 320, height: int = 240) -> CameraIntrinsics:
    # 63 deg horizontal field of view regardless of resolution
    f = 0.8125 * width
    return CameraIntrinsics(fx=f, fy=f, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0, width=width, height=height)


def _static_poses(n: int) -> np.ndarray:
    return np.broadcast_to(np.eye(4), (n, 4, 4)).copy()


def _translations(offsets) -> np.ndarray:
    offsets = np.asarray(offsets, dtype=float)
    poses = np.broadcast_to(np.eye(4), (len(offsets), 4, 4)).copy()
    poses[:, :3, 3] = offsets
    return poses


def _yaw_poses(angles_rad) -> np.ndarray:
    poses = []
    for a in angles_rad:
        c, s = np.cos(a), np.sin(a)
        T = np.eye(4)
        T[:3, :3] = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
        poses.append(T)
    return np.array(poses)


def _bg_plane(z: float, seed: int = 1, scale: float = 0.24) -> Body:
    return Body(
        shape=Plane(point=(0.0, 0.0, z), normal=(0.0, 0.0, -1.0)),
        moving=False,
        texture_seed=seed,
        texture_scale=scale,
        texture_contrast=0.36,
    )


def _static_box_suite(K: CameraIntrinsics, frames: int = 40) -> SceneSpec:
    # fixed camera; a textured box slides in from the left and crosses the view
    xs = -1.25 + 0.045 * np.arange(frames)
    box = Body(
        shape=Box(size=(0.30, 0.30, 0.20)),
        poses=_translations([(x, 0.0, 1.60) for x in xs]),
        moving=True,
        texture_seed=7,
        texture_scale=0.16,
        texture_contrast=0.30,
        brightness=0.55,
    )
    return SceneSpec(
        intrinsics=K,
        camera_poses=_static_poses(frames),
        bodies=[_bg_plane(2.0), box],
        seed=10,
    )


def _dominant_object_suite(K: CameraIntrinsics, frames: int = 48) -> SceneSpec:
    # slowly translating camera; a large textured box enters fast, then
    # creeps sideways while covering well over half of the image
    cam = _translations([(0.004 * f, 0.0, 0.0) for f in range(frames)])
    xs = []
    for f in range(frames):
        if f < 20:
            xs.append(-1.12 + 0.048 * f)
        else:
            xs.append(-1.12 + 0.048 * 20 + 0.0085 * (f - 20))
    box = Body(
        shape=Box(size=(0.78, 0.78, 0.20)),
        poses=_translations([(x, 0.0, 1.05) for x in xs]),
        moving=True,
        texture_seed=21,
        texture_scale=0.55,
        texture_contrast=0.30,
        brightness=0.45,
    )
    return SceneSpec(
        intrinsics=K,
        camera_poses=cam,
        bodies=[_bg_plane(2.2, seed=2, scale=0.30), box],
        seed=11,
    )


def _construct_suite(K: CameraIntrinsics, frames: int = 56) -> SceneSpec:
    # fixed camera; a box slides in, parks mid-view, then slides out again
    xs = []
    for f in range(frames):
        if f < 20:
            xs.append(-1.36 + 0.063 * f)
        elif f < 36:
            xs.append(-1.36 + 0.063 * 20)
        else:
            xs.append(-1.36 + 0.063 * 20 + 0.063 * (f - 36))
    box = Body(
        shape=Box(size=(0.36, 0.36, 0.36)),
        poses=_translations([(x, 0.0, 1.70) for x in xs]),
        moving=True,
        texture_seed=5,
        texture_scale=0.18,
        texture_contrast=0.30,
        brightness=0.55,
    )
    return SceneSpec(
        intrinsics=K,
        camera_poses=_static_poses(frames),
        bodies=[_bg_plane(2.0, seed=3), box],
        seed=12,
    )


def _dynamic_pan_suite(K: CameraIntrinsics, frames: int = 40) -> SceneSpec:
    # camera pans right, revealing a fresh strip every frame, while a box
    # enters against the pan through the revealed edge and sweeps across
    pan = _yaw_poses(np.deg2rad(0.45) * np.arange(frames))
    xs = 1.35 - 0.035 * np.arange(frames)
    box = Body(
        shape=Box(size=(0.34, 0.34, 0.20)),
        poses=_translations([(x, 0.0, 1.60) for x in xs]),
        moving=True,
        texture_seed=9,
        texture_scale=0.16,
        texture_contrast=0.30,
        brightness=0.55,
    )
    return SceneSpec(
        intrinsics=K,
        camera_poses=pan,
        bodies=[_bg_plane(2.3, seed=4, scale=0.28), box],
        seed=13,
    )


def _toss_suite(K: CameraIntrinsics, frames: int = 32) -> SceneSpec:
    # fixed camera; two small fast spheres arc across in opposite directions
    f = np.arange(frames, dtype=float)
    p1 = np.stack([-1.15 + 0.075 * f, 0.35 - 0.045 * f + 0.0012 * f**2, np.full(frames, 1.45)], axis=1)
    p2 = np.stack([1.28 - 0.075 * f, -0.30 + 0.052 * f - 0.0012 * f**2, np.full(frames, 1.75)], axis=1)
    s1 = Body(shape=Sphere(radius=0.13), poses=_translations(p1), moving=True, texture_seed=31, texture_scale=0.10, texture_contrast=0.3)
    s2 = Body(shape=Sphere(radius=0.13), poses=_translations(p2), moving=True, texture_seed=32, texture_scale=0.10, texture_contrast=0.3)
    return SceneSpec(
        intrinsics=K,
        camera_poses=_static_poses(frames),
        bodies=[_bg_plane(2.1, seed=6), s1, s2],
        seed=14,
    )


SUITE_BUILDERS = {
    "static_box": _static_box_suite,
    "dominant_object": _dominant_object_suite,
    "construct": _construct_suite,
    "dynamic_pan": _dynamic_pan_suite,
    "toss": _toss_suite,
}


def standard_suites(width: int = 320, height: int = 240) -> dict:
    """Named scene catalog covering the detection and odometry scenarios."""
    K = default_intrinsics(width, height)
    return {name: build(K) for name, build in SUITE_BUILDERS.items()}


def export_tum(frames, K: CameraIntrinsics, root, depth_scale: float = 5000.0) -> None:
    """Write a rendered sequence in TUM on-disk layout (plus mask/ and intrinsics)."""
    from . import dataset_io

    os.makedirs(root, exist_ok=True)
    for sub in ("rgb", "depth", "mask"):
        os.makedirs(os.path.join(root, sub), exist_ok=True)
    rgb_lines = []
    depth_lines = []
    times = []
    poses = []
    for fr in frames:
        name = f"{fr.timestamp:.6f}.png"
        rgb = np.repeat(fr.intensity[:, :, None], 3, axis=2)
        dataset_io.write_rgb_png(os.path.join(root, "rgb", name), rgb)
        dataset_io.write_depth_png(os.path.join(root, "depth", name), fr.depth, depth_scale)
        dataset_io.write_mask_png(os.path.join(root, "mask", name), fr.mask)
        rgb_lines.append(f"{fr.timestamp:.6f} rgb/{name}")
        depth_lines.append(f"{fr.timestamp:.6f} depth/{name}")
        times.append(fr.timestamp)
        poses.append(fr.camera_pose)
    with open(os.path.join(root, "rgb.txt"), "w") as fh:
        fh.write("# timestamp filename\n" + "\n".join(rgb_lines) + "\n")
    with open(os.path.join(root, "depth.txt"), "w") as fh:
        fh.write("# timestamp filename\n" + "\n".join(depth_lines) + "\n")
    traj = dataset_io.Trajectory(timestamps=np.array(times), poses=np.array(poses))
    dataset_io.write_trajectory(traj, os.path.join(root, "groundtruth.txt"))
    with open(os.path.join(root, "intrinsics.txt"), "w") as fh:
        fh.write(f"{K.fx} {K.fy} {K.cx} {K.cy} {K.width} {K.height}\n")
