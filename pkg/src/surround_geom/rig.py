"""Surround-rig calibration container shared by every pipeline stage."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Union

from .errors import InvalidArgumentError, NotFoundError
from .geometry import FisheyeModel, PinholeIntrinsics, Pose, compose

CameraModel = Union[PinholeIntrinsics, FisheyeModel]


@dataclass(frozen=True)
class Camera:
    camera_id: str
    model: CameraModel
    pose_rel: Pose


@dataclass
class RigCalibration:
    """M cameras with poses relative to the front camera, plus its trajectory.

    ``pose_rel`` of camera m maps camera-m coordinates into front-camera
    coordinates; the front camera's own ``pose_rel`` is the identity. The
    absolute (camera-to-world) pose of camera m at frame t is
    ``compose(pose_rel_m, front_trajectory[t])``.
    """

    cameras: list[Camera]
    front_camera_id: str
    ring_order: list[str]
    front_trajectory: dict[int, Pose] = field(default_factory=dict)
    sequence_id: str = ""
    frame_rate_hz: float = 10.0

    def __post_init__(self):
        ids = [c.camera_id for c in self.cameras]
        if len(set(ids)) != len(ids):
            raise InvalidArgumentError("duplicate camera ids")
        if self.front_camera_id not in ids:
            raise InvalidArgumentError("front_camera_id not among cameras")
        if sorted(self.ring_order) != sorted(ids):
            raise InvalidArgumentError("ring_order must be a permutation of camera ids")
        front = self.camera(self.front_camera_id)
        rot_angle = 2.0 * abs(float(front.pose_rel.quaternion[0]))
        if abs(rot_angle - 2.0) > 1e-9 or float(abs(front.pose_rel.translation).max()) > 1e-9:
            raise InvalidArgumentError("front camera pose_rel must be the identity")

    def camera(self, camera_id: str) -> Camera:
        for c in self.cameras:
            if c.camera_id == camera_id:
                return c
        raise NotFoundError(camera_id)

    def camera_ids(self) -> list[str]:
        return [c.camera_id for c in self.cameras]

    def frame_ids(self) -> list[int]:
        return sorted(self.front_trajectory)

    def front_pose(self, frame_id: int) -> Pose:
        if frame_id not in self.front_trajectory:
            raise NotFoundError(frame_id)
        return self.front_trajectory[frame_id]

    def absolute_pose(self, camera_id: str, frame_id: int) -> Pose:
        """Camera-to-world pose of ``camera_id`` at ``frame_id``."""
        return compose(self.camera(camera_id).pose_rel, self.front_pose(frame_id))

    def adjacent_pairs(self) -> list[tuple[str, str]]:
        """Ring-neighbor camera pairs, including the wrap-around pair."""
        n = len(self.ring_order)
        return [(self.ring_order[i], self.ring_order[(i + 1) % n]) for i in range(n)]

    def neighbors(self, camera_id: str) -> tuple[str, str]:
        i = self.ring_order.index(camera_id)
        n = len(self.ring_order)
        return self.ring_order[(i - 1) % n], self.ring_order[(i + 1) % n]

    def with_relative_poses(self, poses: dict[str, Pose]) -> "RigCalibration":
        cams = [replace(c, pose_rel=poses.get(c.camera_id, c.pose_rel)) for c in self.cameras]
        return RigCalibration(cams, self.front_camera_id, list(self.ring_order),
                              dict(self.front_trajectory), self.sequence_id, self.frame_rate_hz)

    def with_trajectory(self, trajectory: dict[int, Pose]) -> "RigCalibration":
        return RigCalibration(list(self.cameras), self.front_camera_id, list(self.ring_order),
                              dict(trajectory), self.sequence_id, self.frame_rate_hz)


def compose_absolute(calib: RigCalibration, camera_id: str, frame_id: int) -> Pose:
    """Absolute pose of a camera at a frame (relative pose chained onto the
    front-camera trajectory)."""
    return calib.absolute_pose(camera_id, frame_id)
