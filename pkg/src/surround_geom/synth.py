"""Synthetic surround-rig generator and ground-truth oracle.

Renders procedurally textured scenes (planes + spheres, analytic ray
intersection) through pinhole or fisheye cameras, builds the two rig presets,
injects calibrated pose noise, and produces exact correspondence graphs.
World frame: z up, front camera initially looking along +x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .correspond import CorrespondenceGraph, build_graph
from .errors import InvalidArgumentError
from .geometry import (
    FisheyeModel,
    PinholeIntrinsics,
    Pose,
    compose,
    pixel_grid,
    pinhole_ray_directions,
    project_with_mask,
    quat_from_axis_angle,
    quat_multiply,
    spherical_to_ray,
)
from .rig import Camera, RigCalibration

_MISS = np.inf


# ---------------------------------------------------------------------------
# Procedural texture: multi-octave 3-D value noise, deterministic per seed
# ---------------------------------------------------------------------------

_M1 = np.uint64(0x9E3779B185EBCA87)
_M2 = np.uint64(0xC2B2AE3D27D4EB4F)
_M3 = np.uint64(0x165667B19E3779F9)
_MIX = np.uint64(0xFF51AFD7ED558CCD)


def _hash01(ix: np.ndarray, iy: np.ndarray, iz: np.ndarray, seed: int) -> np.ndarray:
    with np.errstate(over="ignore"):
        h = (ix.astype(np.uint64) * _M1) ^ (iy.astype(np.uint64) * _M2) \
            ^ (iz.astype(np.uint64) * _M3) ^ (np.uint64(seed & 0xFFFFFFFFFFFFFFFF) * _MIX)
        h ^= h >> np.uint64(33)
        h *= _MIX
        h ^= h >> np.uint64(33)
    return h.astype(np.float64) / float(2**64)


def _value_noise(points: np.ndarray, freq: float, seed: int) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64) * freq
    base = np.floor(p)
    frac = p - base
    # smoothstep weights keep the field C1-continuous for bilinear warping
    w = frac * frac * (3.0 - 2.0 * frac)
    idx = base.astype(np.int64)
    out = np.zeros(p.shape[:-1])
    for dx in (0, 1):
        wx = w[..., 0] if dx else 1.0 - w[..., 0]
        for dy in (0, 1):
            wy = w[..., 1] if dy else 1.0 - w[..., 1]
            for dz in (0, 1):
                wz = w[..., 2] if dz else 1.0 - w[..., 2]
                h = _hash01(idx[..., 0] + dx, idx[..., 1] + dy, idx[..., 2] + dz, seed)
                out += wx * wy * wz * h
    return out


def texture_value(points: np.ndarray, seed: int,
                  base_freq: float = 0.35, octaves: int = 6, decay: float = 0.7) -> np.ndarray:
    """Procedural intensity in [0, 1] with energy at multiple spatial scales."""
    total = np.zeros(np.asarray(points).shape[:-1])
    amp_sum = 0.0
    amp = 1.0
    freq = base_freq
    for k in range(octaves):
        total += amp * _value_noise(points, freq, seed + 101 * k)
        amp_sum += amp
        amp *= decay
        freq *= 2.0
    return total / amp_sum


# ---------------------------------------------------------------------------
# Analytic surfaces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Plane:
    """Bounded textured plane: point + unit normal + two in-plane half extents."""

    point: np.ndarray
    normal: np.ndarray
    u_axis: np.ndarray
    half_u: float
    half_v: float

    def intersect(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        n = self.normal
        denom = dirs @ n
        num = (self.point - origins) @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(np.abs(denom) > 1e-12, num / denom, _MISS)
        hit = origins + t[..., None] * dirs
        rel = hit - self.point
        v_axis = np.cross(n, self.u_axis)
        in_u = np.abs(rel @ self.u_axis) <= self.half_u
        in_v = np.abs(rel @ v_axis) <= self.half_v
        return np.where((t > 1e-9) & in_u & in_v, t, _MISS)


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float

    def intersect(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        oc = origins - self.center
        b = np.sum(oc * dirs, axis=-1)
        c = np.sum(oc * oc, axis=-1) - self.radius**2
        disc = b * b - c
        sq = np.sqrt(np.maximum(disc, 0.0))
        t0 = -b - sq
        t1 = -b + sq
        t = np.where(t0 > 1e-9, t0, np.where(t1 > 1e-9, t1, _MISS))
        return np.where(disc > 0, t, _MISS)


@dataclass
class SyntheticScene:
    """Set of analytic surfaces with a seeded procedural texture."""

    surfaces: list = field(default_factory=list)
    texture_seed: int = 0

    def intersect(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """Nearest hit distance along each (unit) ray; inf on miss."""
        t = np.full(np.asarray(dirs).shape[:-1], _MISS)
        for s in self.surfaces:
            t = np.minimum(t, s.intersect(origins, dirs))
        return t

    def shade(self, points: np.ndarray) -> np.ndarray:
        return texture_value(points, self.texture_seed)


def make_scene(seed: int = 0, wall_distance: float = 12.0, n_walls: int = 8,
               wall_height: float = 8.0, n_spheres: int = 12) -> SyntheticScene:
    """Urban-ish enclosure: ground plane, a polygon of walls, and spheres
    spread around the full ring so every viewing sector has 3-D structure."""
    rng = np.random.default_rng(seed)
    surfaces: list = [
        Plane(np.zeros(3), np.array([0.0, 0.0, 1.0]),
              np.array([1.0, 0.0, 0.0]), 200.0, 200.0),
    ]
    half_w = wall_distance * math.tan(math.pi / n_walls) * 1.2
    for k in range(n_walls):
        az = 2.0 * math.pi * k / n_walls
        out = np.array([math.cos(az), math.sin(az), 0.0])
        center = out * wall_distance + np.array([0.0, 0.0, wall_height / 2.0])
        u_axis = np.array([-math.sin(az), math.cos(az), 0.0])
        surfaces.append(Plane(center, -out, u_axis, half_w, wall_height / 2.0))
    for k in range(n_spheres):
        az = 2.0 * math.pi * k / n_spheres + rng.uniform(-0.15, 0.15)
        dist = rng.uniform(4.0, 9.0)
        radius = rng.uniform(0.6, 1.4)
        center = np.array([dist * math.cos(az), dist * math.sin(az),
                           rng.uniform(0.8, 2.8)])
        surfaces.append(Sphere(center, radius))
    return SyntheticScene(surfaces, texture_seed=seed)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def camera_rays(model, pose: Pose, grid: np.ndarray):
    """World-space unit rays + per-pixel validity + camera-frame z component."""
    if isinstance(model, PinholeIntrinsics):
        d_cam = pinhole_ray_directions(model, grid)
        valid = np.ones(grid.shape[:-1], dtype=bool)
    elif isinstance(model, FisheyeModel):
        du = grid[..., 0] - model.cx
        dv = grid[..., 1] - model.cy
        r = np.hypot(du, dv)
        phi = r / model.f
        theta = np.where(r == 0, 0.0, np.arctan2(dv, du))
        d_cam = spherical_to_ray(phi, theta)
        valid = phi <= model.max_phi()
    else:
        raise InvalidArgumentError(f"unsupported camera model {type(model).__name__}")
    d_world = pose.rotate(d_cam)
    return d_world, valid, d_cam[..., 2]


def render(scene: SyntheticScene, model, pose: Pose,
           size: tuple[int, int] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Ray-cast the scene through a camera.

    Returns ``(image, depth)`` float32 grids. Depth is camera-frame z-depth
    for pinhole models and ray length for fisheye models; 0 marks pixels with
    no return (miss or outside the fisheye FOV).
    """
    if size is not None and size != (model.width, model.height):
        raise InvalidArgumentError("size must match the camera model dimensions")
    grid = pixel_grid(model.width, model.height)
    dirs, valid, dz = camera_rays(model, pose, grid)
    origin = np.broadcast_to(pose.translation, dirs.shape)
    t = scene.intersect(origin, dirs)
    hit = valid & np.isfinite(t)
    points = pose.translation + t[..., None] * dirs
    image = np.zeros(t.shape, dtype=np.float32)
    if hit.any():
        image[hit] = scene.shade(points[hit]).astype(np.float32)
    if isinstance(model, PinholeIntrinsics):
        depth = np.where(hit, t * dz, 0.0)
    else:
        depth = np.where(hit, t, 0.0)
    return image, depth.astype(np.float32)


# ---------------------------------------------------------------------------
# Rig presets
# ---------------------------------------------------------------------------

RING6_PINHOLE = "ring6_pinhole"
RING4_FISHEYE = "ring4_fisheye"


@dataclass(frozen=True)
class RigPreset:
    name: str
    rig: RigCalibration


def _ring_camera_pose(azimuth: float, ring_radius: float, height: float) -> Pose:
    """Camera-to-world pose of an outward-facing ring camera (OpenCV axes)."""
    f = np.array([math.cos(azimuth), math.sin(azimuth), 0.0])   # forward (+z cam)
    x = np.array([math.sin(azimuth), -math.cos(azimuth), 0.0])  # right (+x cam)
    y = np.array([0.0, 0.0, -1.0])                              # down (+y cam)
    R = np.stack([x, y, f], axis=1)
    c = np.array([ring_radius * math.cos(azimuth), ring_radius * math.sin(azimuth), height])
    return Pose.from_rt(R, c)


def _build_ring(camera_entries: list[tuple[str, object, Pose]],
                front_id: str, ring_order: list[str]) -> RigCalibration:
    front_abs = dict((cid, pose) for cid, _, pose in camera_entries)[front_id]
    front_inv = front_abs.inverse()
    cams = [Camera(cid, model, compose(pose, front_inv))
            for cid, model, pose in camera_entries]
    return RigCalibration(cams, front_id, ring_order, {0: front_abs})


def make_preset(name: str, width: int = 640, height: int = 480,
                hfov_deg: float = 70.0, ring_radius: float = 0.5,
                camera_height: float = 1.5) -> RigPreset:
    if name == RING6_PINHOLE:
        entries = []
        for m in range(6):
            az = math.radians(60.0 * m)
            model = PinholeIntrinsics.from_hfov(hfov_deg, width, height)
            entries.append((f"cam{m + 1}", model, _ring_camera_pose(az, ring_radius, camera_height)))
        order = [f"cam{m + 1}" for m in range(6)]
        return RigPreset(name, _build_ring(entries, "cam1", order))
    if name == RING4_FISHEYE:
        side = max(width, height)
        fov_deg = 220.0
        f = (side / 2.0) / math.radians(fov_deg / 2.0)
        entries = []
        for m in range(4):
            az = math.radians(90.0 * m)
            model = FisheyeModel(f, (side - 1) / 2.0, (side - 1) / 2.0, fov_deg, side, side)
            entries.append((f"cam{m + 1}", model, _ring_camera_pose(az, 0.4, camera_height)))
        order = [f"cam{m + 1}" for m in range(4)]
        return RigPreset(name, _build_ring(entries, "cam1", order))
    raise InvalidArgumentError(f"unknown rig preset {name!r}")


def drive_trajectory(rig: RigCalibration, n_frames: int,
                     step_m: float = 0.8, yaw_step_deg: float = 1.0) -> RigCalibration:
    """Extend the front-camera trajectory with constant forward motion + yaw."""
    base = rig.front_trajectory[0]
    traj = {0: base}
    heading = 0.0
    center = np.zeros(3)
    for t in range(1, n_frames):
        center = center + step_m * np.array([math.cos(heading), math.sin(heading), 0.0])
        heading += math.radians(yaw_step_deg)
        q_world = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), heading)
        world_motion = Pose(q_world, center)
        traj[t] = compose(base, world_motion)
    return rig.with_trajectory(traj)


def perturb_rig(rig: RigCalibration, rot_noise_deg: float, trans_noise_m: float,
                seed: int, fixed_magnitude: bool = False) -> RigCalibration:
    """Randomly disturb every non-front relative pose.

    Rotation: random axis, magnitude uniform in (0, rot_noise_deg] (or exactly
    rot_noise_deg when ``fixed_magnitude``). Translation: uniform in the ball
    of radius ``trans_noise_m`` (or on its surface). Deterministic per seed.
    """
    if rot_noise_deg < 0 or trans_noise_m < 0:
        raise InvalidArgumentError("noise magnitudes must be non-negative")
    rng = np.random.default_rng(seed)
    new_poses = {}
    for cam in rig.cameras:
        if cam.camera_id == rig.front_camera_id:
            continue
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = math.radians(rot_noise_deg)
        if not fixed_magnitude:
            angle *= rng.uniform()
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        radius = trans_noise_m if fixed_magnitude else trans_noise_m * rng.uniform() ** (1.0 / 3.0)
        dq = quat_from_axis_angle(axis, angle)
        old = cam.pose_rel
        new_poses[cam.camera_id] = Pose(quat_multiply(dq, old.quaternion),
                                        old.translation + radius * direction)
    return rig.with_relative_poses(new_poses)


# ---------------------------------------------------------------------------
# Exact correspondence oracle
# ---------------------------------------------------------------------------

def visible_mask(scene: SyntheticScene, center: np.ndarray, points: np.ndarray,
                 tol: float = 1e-4) -> np.ndarray:
    """True where the segment center->point is unobstructed in the scene."""
    d = points - center
    dist = np.linalg.norm(d, axis=-1)
    ok = dist > 1e-9
    dirs = d / np.where(ok, dist, 1.0)[..., None]
    t = scene.intersect(np.broadcast_to(center, points.shape), dirs)
    return ok & (np.abs(t - dist) < tol * np.maximum(1.0, dist))


def _project_into(scene, rig, camera_id, frame_id, points) -> tuple[np.ndarray, np.ndarray]:
    cam = rig.camera(camera_id)
    pose = rig.absolute_pose(camera_id, frame_id)
    pixels, _, valid = project_with_mask(cam.model, pose, points)
    if valid.any():
        valid = valid & visible_mask(scene, pose.translation, points)
    return pixels, valid


def exact_matcher(scene: SyntheticScene, rig: RigCalibration, frames: list[int],
                  sigma: float = 0.0, outlier_fraction: float = 0.0,
                  outlier_px: float = 20.0, points_per_pair: int = 80,
                  seed: int = 0) -> CorrespondenceGraph:
    """Ground-truth correspondence graph for the given (pinhole) rig.

    Scene points are sampled in the overlap of every adjacent camera pair at
    the first frame, then observed in every camera/frame where they are
    visible and unoccluded. Pixel noise and outliers are optional; true
    landmark positions are recorded for oracle comparisons.
    """
    rng = np.random.default_rng(seed)
    camera_ids = rig.camera_ids()
    landmarks: list[np.ndarray] = []
    t0 = frames[0]
    for cam_a, cam_b in rig.adjacent_pairs():
        model_a = rig.camera(cam_a).model
        pose_a = rig.absolute_pose(cam_a, t0)
        found = 0
        for _ in range(12):
            if found >= points_per_pair:
                break
            batch = points_per_pair * 4
            px = np.stack([rng.uniform(0, model_a.width - 1, batch),
                           rng.uniform(0, model_a.height - 1, batch)], axis=1)
            d_world = pose_a.rotate(pinhole_ray_directions(model_a, px))
            t = scene.intersect(np.broadcast_to(pose_a.translation, d_world.shape), d_world)
            hit = np.isfinite(t) & (t <= 60.0)
            pts = pose_a.translation + np.where(hit, t, 1.0)[:, None] * d_world
            _, vis = _project_into(scene, rig, cam_b, t0, pts)
            for p in pts[hit & vis]:
                if found >= points_per_pair:
                    break
                landmarks.append(p)
                found += 1
    landmarks_arr = np.asarray(landmarks).reshape(-1, 3)

    records: list[tuple[str, int, int, float, float]] = []
    for cid in camera_ids:
        for fid in frames:
            pixels, valid = _project_into(scene, rig, cid, fid, landmarks_arr)
            for li in np.flatnonzero(valid):
                u, v = pixels[li]
                if sigma > 0:
                    u += rng.normal(0.0, sigma)
                    v += rng.normal(0.0, sigma)
                if outlier_fraction > 0 and rng.uniform() < outlier_fraction:
                    ang = rng.uniform(0, 2 * math.pi)
                    u += outlier_px * math.cos(ang)
                    v += outlier_px * math.sin(ang)
                records.append((cid, fid, int(li), float(u), float(v)))

    # prune landmarks that ended with fewer than 2 observations
    counts = np.zeros(len(landmarks_arr), dtype=np.int64)
    for _, _, li, _, _ in records:
        counts[li] += 1
    keep = counts >= 2
    remap = -np.ones(len(landmarks_arr), dtype=np.int64)
    remap[keep] = np.arange(int(keep.sum()))
    records = [(c, f, int(remap[li]), u, v) for c, f, li, u, v in records if keep[li]]

    pair_counts: dict = {}
    by_view: dict[tuple[str, int], set[int]] = {}
    for c, f, li, _, _ in records:
        by_view.setdefault((c, f), set()).add(li)
    for cam_a, cam_b in rig.adjacent_pairs():
        for ta in frames:
            for tb in frames:
                common = by_view.get((cam_a, ta), set()) & by_view.get((cam_b, tb), set())
                pair_counts[((cam_a, ta), (cam_b, tb))] = len(common)

    return build_graph(records, landmarks_arr[keep], camera_ids, list(frames),
                       pair_counts=pair_counts, true_landmarks=landmarks_arr[keep])
