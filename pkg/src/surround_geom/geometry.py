"""Camera models, rigid transforms, and projection primitives.

Conventions used across the whole package:

* Poses are **camera-to-world** rigid transforms: ``p_world = R @ p_cam + t``,
  so ``t`` is the camera center in world coordinates.
* Quaternions are unit, **scalar-first** ``(w, x, y, z)``.
* Camera frames follow OpenCV: ``+x`` right, ``+y`` down, ``+z`` forward
  (optical axis). Pixel ``(u, v)`` has ``u`` along columns and ``v`` along
  rows; the center of the pixel stored at ``image[i, j]`` is ``(u, v) = (j, i)``.
* ``compose(a, b)`` chains transforms *pipeline style*: apply ``a`` first,
  then ``b`` (matrix form ``b.matrix() @ a.matrix()``). With camera-to-world
  poses this makes ``compose(cam_in_ref, ref_in_world)`` the absolute pose of
  the camera, which is how the rig parametrization uses it.
* Angles are radians everywhere except file formats and CLI flags.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCameraError, InvalidArgumentError, OutsideFovError

_QUAT_TOL = 1e-9


# ---------------------------------------------------------------------------
# Quaternion helpers (scalar-first)
# ---------------------------------------------------------------------------

def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n == 0.0:
        raise InvalidArgumentError("quaternion must be finite and non-zero")
    return q / n


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product ``a * b`` (rotation b applied first, then a)."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Convert a rotation matrix to a unit quaternion (Shepperd's method)."""
    R = np.asarray(R, dtype=np.float64)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array([(R[2, 1] - R[1, 2]) / s,
                      0.25 * s,
                      (R[0, 1] + R[1, 0]) / s,
                      (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array([(R[0, 2] - R[2, 0]) / s,
                      (R[0, 1] + R[1, 0]) / s,
                      0.25 * s,
                      (R[1, 2] + R[2, 1]) / s])
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array([(R[1, 0] - R[0, 1]) / s,
                      (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s,
                      0.25 * s])
    return quat_normalize(q)


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n == 0.0:
        if angle != 0.0:
            raise InvalidArgumentError("zero axis with non-zero angle")
        return np.array([1.0, 0.0, 0.0, 0.0])
    half = 0.5 * angle
    return np.concatenate(([math.cos(half)], math.sin(half) * axis / n))


def rotation_angle(R: np.ndarray) -> float:
    """Rotation angle of ``R`` in radians, in [0, pi]."""
    c = (np.trace(R) - 1.0) / 2.0
    return math.acos(min(1.0, max(-1.0, c)))


# ---------------------------------------------------------------------------
# Rigid transforms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Pose:
    """Rigid camera-to-world transform (unit quaternion + translation in meters)."""

    quaternion: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = quat_normalize(self.quaternion)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise InvalidArgumentError("translation must be finite")
        object.__setattr__(self, "quaternion", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_rt(cls, R: np.ndarray, t: np.ndarray) -> "Pose":
        return cls(matrix_to_quat(R), np.asarray(t, dtype=np.float64))

    @classmethod
    def from_matrix(cls, M: np.ndarray) -> "Pose":
        M = np.asarray(M, dtype=np.float64)
        return cls.from_rt(M[:3, :3], M[:3, 3])

    @classmethod
    def from_axis_angle(cls, axis, angle: float, translation=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(quat_from_axis_angle(axis, angle), np.asarray(translation, dtype=np.float64))

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.quaternion)

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation_matrix()
        M[:3, 3] = self.translation
        return M

    def inverse(self) -> "Pose":
        qc = quat_conjugate(self.quaternion)
        R_T = self.rotation_matrix().T
        return Pose(qc, -R_T @ self.translation)

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Apply to 3-D point(s): shape (3,) or (..., 3)."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation_matrix().T + self.translation

    def rotate(self, dirs: np.ndarray) -> np.ndarray:
        """Apply only the rotation (for direction vectors)."""
        d = np.asarray(dirs, dtype=np.float64)
        return d @ self.rotation_matrix().T


def compose(first: Pose, then: Pose) -> Pose:
    """Chain two rigid transforms: apply ``first``, then ``then``.

    Matrix form: ``compose(a, b).matrix() == b.matrix() @ a.matrix()``.
    """
    q = quat_multiply(then.quaternion, first.quaternion)
    t = then.rotate(first.translation) + then.translation
    return Pose(q, t)


def pose_difference(a: Pose, b: Pose) -> tuple[float, float]:
    """(rotation angle in radians, translation distance in meters) between poses."""
    dR = a.rotation_matrix().T @ b.rotation_matrix()
    return rotation_angle(dR), float(np.linalg.norm(a.translation - b.translation))


# ---------------------------------------------------------------------------
# Camera models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PinholeIntrinsics:
    """Ideal pinhole intrinsics (no distortion). All units pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidArgumentError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidArgumentError("principal point must lie inside the image")

    @classmethod
    def from_hfov(cls, hfov_deg: float, width: int, height: int) -> "PinholeIntrinsics":
        """Square-pixel intrinsics with the given horizontal field of view."""
        if not 0 < hfov_deg < 180:
            raise InvalidArgumentError("hfov must be in (0, 180) degrees")
        f = (width / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
        return cls(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)

    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    def hfov_deg(self) -> float:
        return 2.0 * math.degrees(math.atan((self.width / 2.0) / self.fx))


EQUIDISTANT = "equidistant"


@dataclass(frozen=True)
class FisheyeModel:
    """Fisheye camera with equidistant mapping ``r = f * phi``.

    ``f`` is in pixels per radian; ``fov_deg`` is the full field of view.
    Pixels whose polar angle exceeds ``fov_deg / 2`` are unmapped.
    """

    f: float
    cx: float
    cy: float
    fov_deg: float
    width: int
    height: int
    mapping: str = EQUIDISTANT

    def __post_init__(self):
        if self.mapping != EQUIDISTANT:
            raise InvalidArgumentError(f"unsupported fisheye mapping: {self.mapping!r}")
        if not self.f > 0:
            raise InvalidArgumentError("focal scale must be positive")
        if not 0 < self.fov_deg <= 360:
            raise InvalidArgumentError("fov must be in (0, 360] degrees")

    def max_phi(self) -> float:
        return math.radians(self.fov_deg) / 2.0


# ---------------------------------------------------------------------------
# Spherical <-> ray
# ---------------------------------------------------------------------------

def spherical_to_ray(phi, theta) -> np.ndarray:
    """Unit ray for 2-D spherical coordinates (polar angle from +z, azimuth from +x).

    Returns ``[sin(phi)cos(theta), sin(phi)sin(theta), cos(phi)]``; accepts
    scalars or broadcastable arrays (vectors stacked in the last axis).
    """
    phi = np.asarray(phi, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(theta))):
        raise InvalidArgumentError("phi and theta must be finite")
    sp = np.sin(phi)
    ray = np.stack([sp * np.cos(theta), sp * np.sin(theta), np.cos(phi)], axis=-1)
    return ray


def ray_to_spherical(ray: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`spherical_to_ray`. Theta is 0 by convention on the poles."""
    r = np.asarray(ray, dtype=np.float64)
    n = np.linalg.norm(r, axis=-1)
    z = np.clip(r[..., 2] / np.where(n == 0, 1.0, n), -1.0, 1.0)
    phi = np.arccos(z)
    theta = np.arctan2(r[..., 1], r[..., 0])
    theta = np.where((r[..., 0] == 0) & (r[..., 1] == 0), 0.0, theta)
    return phi, theta


# ---------------------------------------------------------------------------
# Pinhole projection
# ---------------------------------------------------------------------------

def project_pinhole(K: PinholeIntrinsics, pose: Pose, points: np.ndarray) -> np.ndarray:
    """Project world point(s) into pixel coordinates.

    Raises :class:`BehindCameraError` if any point has non-positive depth in
    the camera frame.
    """
    p_cam = pose.inverse().transform(points)
    z = np.atleast_1d(np.asarray(p_cam)[..., 2])
    if np.any(z <= 0):
        raise BehindCameraError("point has non-positive camera-frame depth")
    p_cam = np.asarray(p_cam)
    u = K.fx * p_cam[..., 0] / p_cam[..., 2] + K.cx
    v = K.fy * p_cam[..., 1] / p_cam[..., 2] + K.cy
    return np.stack([u, v], axis=-1)


def project_with_mask(
    K: PinholeIntrinsics, pose: Pose, points: np.ndarray, min_depth: float = 1e-9
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched projection that masks instead of raising.

    Returns ``(pixels, depths, valid)`` where valid requires positive depth
    and the pixel inside the image bounds.
    """
    p_cam = pose.inverse().transform(np.asarray(points, dtype=np.float64))
    z = p_cam[..., 2]
    safe_z = np.where(z > min_depth, z, 1.0)
    u = K.fx * p_cam[..., 0] / safe_z + K.cx
    v = K.fy * p_cam[..., 1] / safe_z + K.cy
    pixels = np.stack([u, v], axis=-1)
    valid = (z > min_depth) & (u >= 0) & (u <= K.width - 1) & (v >= 0) & (v <= K.height - 1)
    return pixels, z, valid


def unproject_pinhole(K: PinholeIntrinsics, pose: Pose, pixels: np.ndarray, depth) -> np.ndarray:
    """Lift pixel(s) at the given camera-frame depth(s) back to world points."""
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise InvalidArgumentError("depth must be positive")
    px = np.asarray(pixels, dtype=np.float64)
    x = (px[..., 0] - K.cx) / K.fx * depth
    y = (px[..., 1] - K.cy) / K.fy * depth
    p_cam = np.stack([x, y, depth * np.ones_like(x)], axis=-1)
    return pose.transform(p_cam)


def pixel_grid(width: int, height: int) -> np.ndarray:
    """(H, W, 2) array of (u, v) pixel-center coordinates."""
    u, v = np.meshgrid(np.arange(width, dtype=np.float64),
                       np.arange(height, dtype=np.float64))
    return np.stack([u, v], axis=-1)


def pinhole_ray_directions(K: PinholeIntrinsics, pixels: np.ndarray) -> np.ndarray:
    """Unit ray directions in the camera frame for pixel(s)."""
    px = np.asarray(pixels, dtype=np.float64)
    x = (px[..., 0] - K.cx) / K.fx
    y = (px[..., 1] - K.cy) / K.fy
    d = np.stack([x, y, np.ones_like(x)], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# Fisheye mapping
# ---------------------------------------------------------------------------

def fisheye_pixel_to_spherical(model: FisheyeModel, pixel) -> tuple[float, float]:
    """Map one fisheye pixel to spherical coordinates (phi, theta).

    Raises :class:`OutsideFovError` when the pixel lies beyond half the lens
    field of view (an unmapped pixel, not a failure).
    """
    u, v = float(pixel[0]), float(pixel[1])
    du, dv = u - model.cx, v - model.cy
    r = math.hypot(du, dv)
    phi = r / model.f
    if phi > model.max_phi():
        raise OutsideFovError(f"pixel radius {r:.2f}px maps to phi {phi:.4f}rad "
                              f"> fov/2 {model.max_phi():.4f}rad")
    theta = 0.0 if r == 0.0 else math.atan2(dv, du)
    return phi, theta


def fisheye_spherical_to_pixel(model: FisheyeModel, phi, theta):
    """Batched inverse of the pixel->(phi,theta) map. No FOV check here."""
    phi = np.asarray(phi, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    r = model.f * phi
    return np.stack([model.cx + r * np.cos(theta), model.cy + r * np.sin(theta)], axis=-1)


def fisheye_ray_to_pixel(model: FisheyeModel, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Project camera-frame direction(s) through the fisheye; returns (pixels, valid)."""
    phi, theta = ray_to_spherical(dirs)
    px = fisheye_spherical_to_pixel(model, phi, theta)
    valid = phi <= model.max_phi()
    return px, valid
