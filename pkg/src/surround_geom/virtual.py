"""Fisheye-to-virtual-pinhole conversion.

Each fisheye camera is split into two co-located virtual pinhole cameras
whose optical axes are yawed a quarter of the lens field of view to either
side, so downstream rectification and matching treat every camera as an
ideal pinhole. Because the virtual cameras share the fisheye center, the
warp is a pure rotation on unit rays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .geometry import (
    FisheyeModel,
    PinholeIntrinsics,
    Pose,
    compose,
    fisheye_spherical_to_pixel,
    pinhole_ray_directions,
    pixel_grid,
    ray_to_spherical,
)
from .imaging import bilinear_sample, to_gray_float
from .rig import Camera, RigCalibration

LEFT = "left"
RIGHT = "right"

# default clearance between the virtual FOV edge and the fisheye FOV edge,
# where fisheye pixel density and distortion are worst
DEFAULT_EDGE_MARGIN_DEG = 5.0


@dataclass(frozen=True)
class VirtualPinholeSpec:
    intrinsics: PinholeIntrinsics
    pose: Pose
    source_camera_id: str
    side: str

    def __post_init__(self):
        if self.side not in (LEFT, RIGHT):
            raise InvalidArgumentError(f"side must be 'left' or 'right', got {self.side!r}")


@dataclass(frozen=True)
class WarpedImage:
    pixels: np.ndarray      # (H, W) float32
    valid_mask: np.ndarray  # (H, W) bool


def _local_yaw(angle: float) -> Pose:
    """Camera-local rotation about the +y (down) axis; positive turns right."""
    c, s = math.cos(angle), math.sin(angle)
    R = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return Pose.from_rt(R, np.zeros(3))


def make_virtual_specs(
    fisheye: FisheyeModel,
    fisheye_pose: Pose,
    target_hfov_deg: float | None = None,
    target_size: tuple[int, int] = (640, 480),
    source_camera_id: str = "",
    edge_margin_deg: float = DEFAULT_EDGE_MARGIN_DEG,
) -> tuple[VirtualPinholeSpec, VirtualPinholeSpec]:
    """Two virtual pinhole specs (left, right) for one fisheye camera.

    The virtual optical axes are yawed by +-fov/4 from the fisheye axis; the
    default horizontal FOV aligns each virtual camera's outer edge with the
    fisheye FOV clipped ``edge_margin_deg`` inside its rim.
    """
    if target_hfov_deg is None:
        target_hfov_deg = fisheye.fov_deg / 2.0 - 2.0 * edge_margin_deg
    if not 0 < target_hfov_deg < 180:
        raise InvalidArgumentError("target horizontal FOV must be in (0, 180) degrees")
    width, height = target_size
    intr = PinholeIntrinsics.from_hfov(target_hfov_deg, width, height)
    yaw = math.radians(fisheye.fov_deg / 4.0)
    # positive local yaw turns the axis toward +x (camera right)
    pose_left = compose(_local_yaw(-yaw), fisheye_pose)
    pose_right = compose(_local_yaw(+yaw), fisheye_pose)
    return (
        VirtualPinholeSpec(intr, pose_left, source_camera_id, LEFT),
        VirtualPinholeSpec(intr, pose_right, source_camera_id, RIGHT),
    )


def warp_to_virtual(
    fisheye_image: np.ndarray,
    fisheye: FisheyeModel,
    fisheye_pose: Pose,
    spec: VirtualPinholeSpec,
    camera_id: str | None = None,
) -> WarpedImage:
    """Resample a fisheye image into one virtual pinhole view.

    Inverse mapping: every virtual pixel casts a ray, the ray is rotated into
    the fisheye frame and converted to spherical coordinates, and the source
    image is sampled bilinearly there. Pixels beyond half the fisheye FOV or
    outside the source image are marked invalid.
    """
    if camera_id is not None and spec.source_camera_id and camera_id != spec.source_camera_id:
        raise InvalidArgumentError(
            f"spec belongs to camera {spec.source_camera_id!r}, got {camera_id!r}")
    if np.linalg.norm(spec.pose.translation - fisheye_pose.translation) > 1e-9:
        raise InvalidArgumentError("virtual camera must be co-located with its fisheye camera")

    image = to_gray_float(fisheye_image)
    if image.shape != (fisheye.height, fisheye.width):
        raise InvalidArgumentError("fisheye image size does not match the camera model")

    grid = pixel_grid(spec.intrinsics.width, spec.intrinsics.height)
    coords, in_fov = virtual_to_fisheye_coords(fisheye, fisheye_pose, spec, grid)
    values, sample_ok = bilinear_sample(image, coords)
    valid = in_fov & sample_ok
    return WarpedImage(np.where(valid, values, 0.0).astype(np.float32), valid)


def virtual_to_fisheye_coords(
    fisheye: FisheyeModel,
    fisheye_pose: Pose,
    spec: VirtualPinholeSpec,
    pixels: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Map continuous virtual-pinhole pixel(s) to fisheye pixel(s).

    Returns ``(coords, in_fov)``; coords are unclamped and may leave the
    source image.
    """
    d_virtual = pinhole_ray_directions(spec.intrinsics, np.asarray(pixels, dtype=np.float64))
    rel = spec.pose.rotation_matrix().T @ fisheye_pose.rotation_matrix()
    d_fish = d_virtual @ rel  # == rel.T @ d per pixel: virtual frame -> fisheye frame
    phi, theta = ray_to_spherical(d_fish)
    in_fov = phi <= fisheye.max_phi()
    coords = fisheye_spherical_to_pixel(fisheye, phi, theta)
    return coords, in_fov


def split_rig(
    rig: RigCalibration,
    target_hfov_deg: float | None = None,
    target_size: tuple[int, int] = (640, 480),
    edge_margin_deg: float = DEFAULT_EDGE_MARGIN_DEG,
) -> tuple[RigCalibration, dict[str, tuple[VirtualPinholeSpec, VirtualPinholeSpec]]]:
    """Virtual-pinhole rig for a fisheye ring.

    Returns the new rig (two pinhole cameras per fisheye camera, ring order
    sorted by yaw) plus the per-source specs. The new front camera is the
    left virtual camera of the old front camera.
    """
    specs: dict[str, tuple[VirtualPinholeSpec, VirtualPinholeSpec]] = {}
    rel_poses: dict[str, Pose] = {}
    models: dict[str, PinholeIntrinsics] = {}
    for cam in rig.cameras:
        if not isinstance(cam.model, FisheyeModel):
            raise InvalidArgumentError(f"camera {cam.camera_id} is not a fisheye camera")
        left, right = make_virtual_specs(
            cam.model, cam.pose_rel, target_hfov_deg, target_size,
            source_camera_id=cam.camera_id, edge_margin_deg=edge_margin_deg)
        specs[cam.camera_id] = (left, right)
        for side, sp in ((LEFT, left), (RIGHT, right)):
            vid = virtual_camera_id(cam.camera_id, side)
            rel_poses[vid] = sp.pose  # pose in the old front-camera frame
            models[vid] = sp.intrinsics

    new_front = virtual_camera_id(rig.front_camera_id, LEFT)
    rebase = rel_poses[new_front].inverse()
    cameras = [Camera(vid, models[vid], compose(rel_poses[vid], rebase))
               for vid in rel_poses]

    # up axis estimated from the cameras' shared "down" (+y) direction
    downs = [rel_poses[vid].rotation_matrix()[:, 1] for vid in rel_poses]
    up = -np.mean(downs, axis=0)
    up /= np.linalg.norm(up)
    fwd_ref = rel_poses[new_front].rotation_matrix()[:, 2]
    fwd_ref = fwd_ref - (fwd_ref @ up) * up
    fwd_ref /= np.linalg.norm(fwd_ref)
    side_ref = np.cross(up, fwd_ref)

    def azimuth(vid: str) -> float:
        f = rel_poses[vid].rotation_matrix()[:, 2]
        a = math.atan2(f @ side_ref, f @ fwd_ref)
        return a % (2.0 * math.pi)

    ring = sorted(rel_poses, key=azimuth)
    front_traj = {t: compose(rel_poses[new_front], p)
                  for t, p in rig.front_trajectory.items()}
    new_rig = RigCalibration(cameras, new_front, ring, front_traj,
                             rig.sequence_id, rig.frame_rate_hz)
    return new_rig, specs


def virtual_camera_id(source_id: str, side: str) -> str:
    return f"{source_id}_{'L' if side == LEFT else 'R'}"
