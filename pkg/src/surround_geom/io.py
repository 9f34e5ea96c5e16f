"""File formats: rig JSON, PFM float depth, 16-bit PNG depth, images, PLY.

Every format written here can be read back to an identical in-memory value
(bit-exact for PFM, 1 mm quantization for the PNG depth interchange).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InvalidArgumentError
from .geometry import FisheyeModel, PinholeIntrinsics, Pose
from .rig import Camera, RigCalibration

RIG_VERSION = 1


# ---------------------------------------------------------------------------
# Rig JSON
# ---------------------------------------------------------------------------

def _camera_to_json(cam: Camera) -> dict:
    entry: dict = {"id": cam.camera_id}
    m = cam.model
    if isinstance(m, PinholeIntrinsics):
        entry["model"] = "pinhole"
        entry.update(fx=m.fx, fy=m.fy, cx=m.cx, cy=m.cy)
    elif isinstance(m, FisheyeModel):
        entry["model"] = "fisheye"
        entry.update(f=m.f, cx=m.cx, cy=m.cy, fov_deg=m.fov_deg)
    else:
        raise InvalidArgumentError(f"unsupported camera model {type(m).__name__}")
    entry["width"] = m.width
    entry["height"] = m.height
    entry["pose"] = {
        "quaternion_wxyz": [float(x) for x in cam.pose_rel.quaternion],
        "translation_xyz": [float(x) for x in cam.pose_rel.translation],
    }
    return entry


def _camera_from_json(entry: dict) -> Camera:
    kind = entry["model"]
    if kind == "pinhole":
        model: object = PinholeIntrinsics(entry["fx"], entry["fy"], entry["cx"],
                                          entry["cy"], entry["width"], entry["height"])
    elif kind == "fisheye":
        model = FisheyeModel(entry["f"], entry["cx"], entry["cy"],
                             entry["fov_deg"], entry["width"], entry["height"])
    else:
        raise InvalidArgumentError(f"unknown camera model {kind!r}")
    pose = Pose(np.asarray(entry["pose"]["quaternion_wxyz"], dtype=np.float64),
                np.asarray(entry["pose"]["translation_xyz"], dtype=np.float64))
    return Camera(entry["id"], model, pose)


def save_rig(path, rig: RigCalibration) -> None:
    data = {
        "version": RIG_VERSION,
        "front_camera_id": rig.front_camera_id,
        "ring_order": list(rig.ring_order),
        "sequence_id": rig.sequence_id,
        "frame_rate_hz": rig.frame_rate_hz,
        "cameras": [_camera_to_json(c) for c in rig.cameras],
        "front_trajectory": {
            str(t): {
                "quaternion_wxyz": [float(x) for x in p.quaternion],
                "translation_xyz": [float(x) for x in p.translation],
            } for t, p in sorted(rig.front_trajectory.items())
        },
    }
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def load_rig(path) -> RigCalibration:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("version") != RIG_VERSION:
        raise InvalidArgumentError(f"unsupported rig file version {data.get('version')!r}")
    cameras = [_camera_from_json(e) for e in data["cameras"]]
    trajectory = {
        int(t): Pose(np.asarray(p["quaternion_wxyz"], dtype=np.float64),
                     np.asarray(p["translation_xyz"], dtype=np.float64))
        for t, p in data.get("front_trajectory", {}).items()
    }
    return RigCalibration(
        cameras=cameras,
        front_camera_id=data["front_camera_id"],
        ring_order=list(data["ring_order"]),
        front_trajectory=trajectory,
        sequence_id=data.get("sequence_id", ""),
        frame_rate_hz=data.get("frame_rate_hz", 10.0),
    )


# ---------------------------------------------------------------------------
# PFM float depth (little-endian, scale -1.0); rows stored bottom-up
# ---------------------------------------------------------------------------

def save_pfm(path, data: np.ndarray) -> None:
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim != 2:
        raise InvalidArgumentError("PFM writer expects a 2-D grid")
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(arr[::-1].astype("<f4").tobytes())


def load_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header != b"Pf":
            raise InvalidArgumentError(f"not a grayscale PFM file: {header!r}")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline())
        count = w * h
        raw = f.read(count * 4)
        if len(raw) != count * 4:
            raise InvalidArgumentError("truncated PFM payload")
        dtype = "<f4" if scale < 0 else ">f4"
        arr = np.frombuffer(raw, dtype=dtype).reshape(h, w)
    return arr[::-1].astype(np.float32)


# ---------------------------------------------------------------------------
# 16-bit PNG depth in millimeters (0 = invalid)
# ---------------------------------------------------------------------------

def save_depth_png(path, depth_m: np.ndarray, valid: np.ndarray | None = None) -> None:
    d = np.asarray(depth_m, dtype=np.float64)
    mm = np.clip(np.rint(d * 1000.0), 0, 65535).astype(np.uint16)
    if valid is not None:
        mm = np.where(valid, mm, 0).astype(np.uint16)
    Image.fromarray(mm, mode="I;16").save(path)


def load_depth_png(path) -> tuple[np.ndarray, np.ndarray]:
    img = Image.open(path)
    mm = np.asarray(img, dtype=np.uint16)
    depth = mm.astype(np.float32) / 1000.0
    return depth, mm > 0


# ---------------------------------------------------------------------------
# 8-bit grayscale images
# ---------------------------------------------------------------------------

def save_image(path, image: np.ndarray) -> None:
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def load_image(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L"), dtype=np.uint8)


def save_mask(path, mask: np.ndarray) -> None:
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(path)


def load_mask(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L")) > 127


# ---------------------------------------------------------------------------
# Image directory layout: DIR/<camera_id>/<frame:06d>.png
# ---------------------------------------------------------------------------

def frame_path(root, camera_id: str, frame_id: int, suffix: str = ".png") -> Path:
    return Path(root) / camera_id / f"{frame_id:06d}{suffix}"


def load_image_set(root, camera_ids: list[str], frames: list[int] | None = None) -> dict:
    """{(camera_id, frame_id): uint8 image} for all available frames."""
    root = Path(root)
    images = {}
    for cid in camera_ids:
        cam_dir = root / cid
        if not cam_dir.is_dir():
            continue
        for p in sorted(cam_dir.glob("*.png")):
            fid = int(p.stem)
            if frames is not None and fid not in frames:
                continue
            images[(cid, fid)] = load_image(p)
    return images


# ---------------------------------------------------------------------------
# PLY point clouds
# ---------------------------------------------------------------------------

def save_ply(path, points: np.ndarray, colors: np.ndarray | None = None,
             binary: bool = True) -> None:
    pts = np.asarray(points, dtype=np.float32).reshape(-1, 3)
    if colors is not None:
        cols = np.asarray(colors).reshape(-1, 3)
        if cols.dtype != np.uint8:
            cols = np.clip(np.rint(cols * 255.0), 0, 255).astype(np.uint8)
        if len(cols) != len(pts):
            raise InvalidArgumentError("points and colors lengths differ")
    header = ["ply",
              "format binary_little_endian 1.0" if binary else "format ascii 1.0",
              f"element vertex {len(pts)}",
              "property float x", "property float y", "property float z"]
    if colors is not None:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            if colors is None:
                f.write(pts.astype("<f4").tobytes())
            else:
                rec = np.zeros(len(pts), dtype=[("xyz", "<f4", 3), ("rgb", "u1", 3)])
                rec["xyz"] = pts
                rec["rgb"] = cols
                f.write(rec.tobytes())
        else:
            for i in range(len(pts)):
                row = f"{pts[i, 0]:.6f} {pts[i, 1]:.6f} {pts[i, 2]:.6f}"
                if colors is not None:
                    row += f" {cols[i, 0]} {cols[i, 1]} {cols[i, 2]}"
                f.write((row + "\n").encode("ascii"))


def load_ply(path) -> tuple[np.ndarray, np.ndarray | None]:
    with open(path, "rb") as f:
        line = f.readline().strip()
        if line != b"ply":
            raise InvalidArgumentError("not a PLY file")
        binary = False
        n = 0
        has_color = False
        while True:
            line = f.readline().strip()
            if line.startswith(b"format binary_little_endian"):
                binary = True
            elif line.startswith(b"element vertex"):
                n = int(line.split()[-1])
            elif line == b"property uchar red":
                has_color = True
            elif line == b"end_header":
                break
        if binary:
            if has_color:
                rec = np.frombuffer(f.read(n * 15),
                                    dtype=[("xyz", "<f4", 3), ("rgb", "u1", 3)])
                return rec["xyz"].copy(), rec["rgb"].copy()
            pts = np.frombuffer(f.read(n * 12), dtype="<f4").reshape(n, 3)
            return pts.copy(), None
        pts = np.empty((n, 3), dtype=np.float32)
        cols = np.empty((n, 3), dtype=np.uint8) if has_color else None
        for i in range(n):
            parts = f.readline().split()
            pts[i] = [float(x) for x in parts[:3]]
            if has_color:
                cols[i] = [int(x) for x in parts[3:6]]
        return pts, cols
