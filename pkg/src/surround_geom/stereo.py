"""Overlap-region depth priors: rectify adjacent views, match, back-project.

The prior for a camera is metric depth on its own image plane, valid only in
the geometric overlap with a ring neighbor, zero elsewhere.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateBaselineError, InvalidArgumentError
from .geometry import PinholeIntrinsics, Pose, pixel_grid
from .imaging import bilinear_sample, box_downsample2, to_gray_float
from .rig import RigCalibration
from .sgm import DisparityMap, SgmParams, median_consistency_filter, sgm_match


@dataclass
class RectifiedPair:
    """Two views rotated onto a common image plane.

    ``rot_left/right`` map original-camera coordinates into the rectified
    frame; both rectified cameras share ``K_rect`` and the rotation, and
    differ by a pure translation of ``baseline`` meters along the rectified
    x-axis. Overlap masks live on the rectified plane.
    """

    K_rect: PinholeIntrinsics
    rot_left: np.ndarray
    rot_right: np.ndarray
    baseline: float
    pose_left: Pose         # rectified-left camera, camera-to-world
    pose_right: Pose
    overlap_mask_left: np.ndarray
    overlap_mask_right: np.ndarray


@dataclass
class DepthPrior:
    """Metric depth on a camera's own image plane; invalid pixels carry 0."""

    depth: np.ndarray
    valid: np.ndarray
    source_pair: tuple[str, str]


def _infinity_mask(pair_K, rect_K: PinholeIntrinsics, rot_own: np.ndarray,
                   rot_other: np.ndarray, own_size, other_size) -> tuple[np.ndarray, np.ndarray]:
    """(own in-bounds pullback, other-camera frustum at infinity) per rect pixel."""
    grid = pixel_grid(rect_K.width, rect_K.height)
    x = (grid[..., 0] - rect_K.cx) / rect_K.fx
    y = (grid[..., 1] - rect_K.cy) / rect_K.fy
    d_rect = np.stack([x, y, np.ones_like(x)], axis=-1)

    def project(rot, K, size):
        d = d_rect @ rot  # rot.T applied per pixel: rectified -> camera frame
        z = d[..., 2]
        ok = z > 1e-9
        zz = np.where(ok, z, 1.0)
        u = K.fx * d[..., 0] / zz + K.cx
        v = K.fy * d[..., 1] / zz + K.cy
        w, h = size
        return ok & (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)

    own = project(rot_own, pair_K[0], own_size)
    other = project(rot_other, pair_K[1], other_size)
    return own, other


def rectify_pair(cam_l: tuple[PinholeIntrinsics, Pose],
                 cam_r: tuple[PinholeIntrinsics, Pose]) -> RectifiedPair:
    """Standard two-view rectification onto the plane orthogonal to the mean
    forward direction, x-axis along the baseline."""
    K_l, pose_l = cam_l
    K_r, pose_r = cam_r
    if (K_l.width, K_l.height) != (K_r.width, K_r.height):
        raise InvalidArgumentError("rectification expects equal image sizes")
    c_l = pose_l.translation
    c_r = pose_r.translation
    baseline = float(np.linalg.norm(c_r - c_l))
    if baseline <= 1e-6:
        raise DegenerateBaselineError("camera centers coincide")
    e1 = (c_r - c_l) / baseline
    R_l = pose_l.rotation_matrix()
    R_r = pose_r.rotation_matrix()
    f_avg = R_l[:, 2] + R_r[:, 2]
    f_avg = f_avg / np.linalg.norm(f_avg)
    e3 = f_avg - (f_avg @ e1) * e1
    n3 = np.linalg.norm(e3)
    if n3 < 1e-9:
        raise DegenerateBaselineError("mean forward direction parallel to baseline")
    e3 /= n3
    e2 = np.cross(e3, e1)
    R_new = np.stack([e1, e2, e3], axis=1)

    fx = (K_l.fx + K_r.fx) / 2.0
    fy = (K_l.fy + K_r.fy) / 2.0
    cx = (K_l.cx + K_r.cx) / 2.0
    cy = (K_l.cy + K_r.cy) / 2.0
    K_rect = PinholeIntrinsics(fx, fy, cx, cy, K_l.width, K_l.height)

    rot_left = R_new.T @ R_l
    rot_right = R_new.T @ R_r
    own_l, other_l = _infinity_mask((K_l, K_r), K_rect, rot_left, rot_right,
                                    (K_l.width, K_l.height), (K_r.width, K_r.height))
    own_r, other_r = _infinity_mask((K_r, K_l), K_rect, rot_right, rot_left,
                                    (K_r.width, K_r.height), (K_l.width, K_l.height))
    return RectifiedPair(
        K_rect=K_rect,
        rot_left=rot_left,
        rot_right=rot_right,
        baseline=baseline,
        pose_left=Pose.from_rt(R_new, c_l),
        pose_right=Pose.from_rt(R_new, c_r),
        overlap_mask_left=own_l & other_l,
        overlap_mask_right=own_r & other_r,
    )


def warp_to_rectified(image: np.ndarray, K: PinholeIntrinsics, rot: np.ndarray,
                      K_rect: PinholeIntrinsics,
                      source_mask: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Resample one original view onto the rectified plane (pure rotation)."""
    img = to_gray_float(image)
    if img.shape != (K.height, K.width):
        raise InvalidArgumentError("image size does not match intrinsics")
    grid = pixel_grid(K_rect.width, K_rect.height)
    x = (grid[..., 0] - K_rect.cx) / K_rect.fx
    y = (grid[..., 1] - K_rect.cy) / K_rect.fy
    d_rect = np.stack([x, y, np.ones_like(x)], axis=-1)
    d_cam = d_rect @ rot  # rot.T per pixel: rectified frame -> original frame
    z = d_cam[..., 2]
    front = z > 1e-9
    zz = np.where(front, z, 1.0)
    coords = np.stack([K.fx * d_cam[..., 0] / zz + K.cx,
                       K.fy * d_cam[..., 1] / zz + K.cy], axis=-1)
    values, ok = bilinear_sample(img, coords, source_mask)
    valid = front & ok
    return np.where(valid, values, 0.0).astype(np.float32), valid


def disparity_to_depth(disp: DisparityMap, K_rect: PinholeIntrinsics,
                       baseline: float) -> tuple[np.ndarray, np.ndarray]:
    """Triangulate per-pixel depth ``Z = fx * baseline / d`` on the rectified
    plane; non-positive disparities become invalid."""
    if baseline <= 0:
        raise InvalidArgumentError("baseline must be positive")
    pos = disp.valid & (disp.values > 0)
    safe = np.where(pos, disp.values, 1.0)
    depth = np.where(pos, K_rect.fx * baseline / safe, 0.0)
    return depth.astype(np.float32), pos


def depth_to_disparity(depth: np.ndarray, valid: np.ndarray,
                       K_rect: PinholeIntrinsics, baseline: float) -> np.ndarray:
    pos = valid & (depth > 0)
    safe = np.where(pos, depth, 1.0)
    return np.where(pos, K_rect.fx * baseline / safe, 0.0).astype(np.float32)


def backproject_prior(depth_rect: np.ndarray, valid_rect: np.ndarray,
                      pair: RectifiedPair, side: str,
                      target_cam: tuple[PinholeIntrinsics, Pose],
                      source_pair: tuple[str, str] = ("", ""),
                      max_range: float = 200.0) -> DepthPrior:
    """Lift rectified depth to 3-D and splat it onto the original camera
    plane with a z-buffer; unmapped pixels stay invalid (depth 0)."""
    if side not in ("left", "right"):
        raise InvalidArgumentError("side must be 'left' or 'right'")
    rect_pose = pair.pose_left if side == "left" else pair.pose_right
    K_rect = pair.K_rect
    K_t, pose_t = target_cam

    vs, us = np.nonzero(valid_rect & (depth_rect > 0) & (depth_rect <= max_range))
    out_depth = np.zeros((K_t.height, K_t.width), dtype=np.float32)
    out_valid = np.zeros((K_t.height, K_t.width), dtype=bool)
    if len(us) == 0:
        return DepthPrior(out_depth, out_valid, source_pair)
    z = depth_rect[vs, us].astype(np.float64)
    x = (us - K_rect.cx) / K_rect.fx * z
    y = (vs - K_rect.cy) / K_rect.fy * z
    p_world = rect_pose.transform(np.stack([x, y, z], axis=-1))

    p_cam = pose_t.inverse().transform(p_world)
    zt = p_cam[:, 2]
    front = zt > 1e-9
    ut = np.rint(K_t.fx * p_cam[front, 0] / zt[front] + K_t.cx).astype(np.int64)
    vt = np.rint(K_t.fy * p_cam[front, 1] / zt[front] + K_t.cy).astype(np.int64)
    zt = zt[front]
    inb = (ut >= 0) & (ut < K_t.width) & (vt >= 0) & (vt < K_t.height)
    ut, vt, zt = ut[inb], vt[inb], zt[inb]
    # z-buffer: nearest depth wins on collisions
    order = np.lexsort((-zt, vt * K_t.width + ut))
    flat = vt[order] * K_t.width + ut[order]
    keep = np.ones(len(flat), dtype=bool)
    keep[:-1] = flat[:-1] != flat[1:]
    flat = flat[keep]
    zk = zt[order][keep]
    ok = zk <= max_range
    out_depth.ravel()[flat[ok]] = zk[ok].astype(np.float32)
    out_valid.ravel()[flat[ok]] = True
    return DepthPrior(out_depth, out_valid, source_pair)


def merge_priors(a: DepthPrior, b: DepthPrior) -> DepthPrior:
    """Combine two priors for one camera; nearest depth wins on conflicts."""
    if a.depth.shape != b.depth.shape:
        raise InvalidArgumentError("priors must share a shape to merge")
    take_b = b.valid & (~a.valid | (b.depth < a.depth))
    depth = np.where(take_b, b.depth, a.depth)
    valid = a.valid | b.valid
    return DepthPrior(depth.astype(np.float32), valid,
                      a.source_pair if a.valid.sum() >= b.valid.sum() else b.source_pair)


def normalize_prior(prior: DepthPrior, max_range: float) -> np.ndarray:
    """Scale depth to [0, 1] by the range cap; non-overlap areas become 0."""
    if max_range <= 0:
        raise InvalidArgumentError("max_range must be positive")
    return np.where(prior.valid, prior.depth / max_range, 0.0).astype(np.float32)


def _max_workers() -> int:
    env = os.environ.get("SURROUND_GEOM_THREADS", "0")
    try:
        n = int(env)
    except ValueError:
        n = 0
    return n if n > 0 else min(8, os.cpu_count() or 1)


def pair_prior(rig: RigCalibration, images: dict, frame: int,
               cam_a: str, cam_b: str, params: SgmParams,
               stereo_matcher=sgm_match, max_range: float = 200.0,
               half_res: bool = False) -> tuple[DepthPrior, DepthPrior] | None:
    """Depth priors that one adjacent pair contributes to its two cameras.

    Returns None when the pair is degenerate (e.g. co-located virtual
    cameras from the same fisheye).
    """
    model_a = rig.camera(cam_a).model
    model_b = rig.camera(cam_b).model
    pose_a = rig.absolute_pose(cam_a, frame)
    pose_b = rig.absolute_pose(cam_b, frame)
    if np.linalg.norm(pose_a.translation - pose_b.translation) <= 1e-6:
        return None
    pair = rectify_pair((model_a, pose_a), (model_b, pose_b))

    def fetch(cid):
        entry = images[cid] if not isinstance(images[cid], dict) else images[cid][frame]
        if isinstance(entry, tuple):
            return to_gray_float(entry[0]), entry[1]
        return to_gray_float(entry), None

    img_a, mask_a = fetch(cam_a)
    img_b, mask_b = fetch(cam_b)
    rect_l, ok_l = warp_to_rectified(img_a, model_a, pair.rot_left, pair.K_rect, mask_a)
    rect_r, ok_r = warp_to_rectified(img_b, model_b, pair.rot_right, pair.K_rect, mask_b)

    if half_res:
        disp_small = stereo_matcher(box_downsample2(rect_l), box_downsample2(rect_r), params)
        disp = _upsample_disparity(disp_small, rect_l.shape)
    else:
        disp = stereo_matcher(rect_l, rect_r, params)

    h, w = rect_l.shape
    xx = np.arange(w)[None, :]

    # left reference: own warp must be valid and the matched right position
    # must hold real image data
    valid_l = disp.valid & ok_l & pair.overlap_mask_left
    xr = np.clip(np.rint(xx - disp.values).astype(np.int64), 0, w - 1)
    valid_l &= np.take_along_axis(ok_r, xr, axis=1)
    left = median_consistency_filter(DisparityMap(
        np.where(valid_l, disp.values, 0.0).astype(np.float32), valid_l,
        disp.min_disp, disp.num_disp))

    if disp.right_values is not None:
        valid_r = disp.right_valid & ok_r & pair.overlap_mask_right
        xl = np.clip(np.rint(xx + disp.right_values).astype(np.int64), 0, w - 1)
        valid_r &= np.take_along_axis(ok_l, xl, axis=1)
        right = median_consistency_filter(DisparityMap(
            np.where(valid_r, disp.right_values, 0.0).astype(np.float32), valid_r,
            disp.min_disp, disp.num_disp))
    else:
        # matcher that provides only the left map: reproject it to the right grid
        right = _left_to_right_disparity(left)

    depth_l, ok_dl = disparity_to_depth(left, pair.K_rect, pair.baseline)
    depth_r, ok_dr = disparity_to_depth(right, pair.K_rect, pair.baseline)
    prior_a = backproject_prior(depth_l, ok_dl, pair, "left",
                                (model_a, pose_a), (cam_a, cam_b), max_range)
    prior_b = backproject_prior(depth_r, ok_dr, pair, "right",
                                (model_b, pose_b), (cam_a, cam_b), max_range)
    return prior_a, prior_b


def _upsample_disparity(disp: DisparityMap, shape: tuple[int, int]) -> DisparityMap:
    def up(vals, mask, scale):
        v = np.repeat(np.repeat(vals * scale, 2, axis=0), 2, axis=1)
        m = np.repeat(np.repeat(mask, 2, axis=0), 2, axis=1)
        full_v = np.zeros(shape, dtype=np.float32)
        full_m = np.zeros(shape, dtype=bool)
        full_v[: v.shape[0], : v.shape[1]] = v[: shape[0], : shape[1]]
        full_m[: m.shape[0], : m.shape[1]] = m[: shape[0], : shape[1]]
        return full_v, full_m

    values, valid = up(disp.values, disp.valid, 2.0)
    rv = rm = None
    if disp.right_values is not None:
        rv, rm = up(disp.right_values, disp.right_valid, 2.0)
    return DisparityMap(values, valid, disp.min_disp * 2, disp.num_disp * 2, rv, rm)


def _left_to_right_disparity(left: DisparityMap) -> DisparityMap:
    h, w = left.values.shape
    values = np.zeros((h, w), dtype=np.float32)
    valid = np.zeros((h, w), dtype=bool)
    ys, xs = np.nonzero(left.valid)
    d = left.values[ys, xs]
    xr = np.rint(xs - d).astype(np.int64)
    ok = (xr >= 0) & (xr < w)
    ys, xr, d = ys[ok], xr[ok], d[ok]
    order = np.lexsort((d, ys * w + xr))  # run ends keep the largest d (nearest)
    flat = ys[order] * w + xr[order]
    keep = np.ones(len(flat), dtype=bool)
    keep[:-1] = flat[:-1] != flat[1:]
    values.ravel()[flat[keep]] = d[order][keep]
    valid.ravel()[flat[keep]] = True
    return DisparityMap(values, valid, left.min_disp, left.num_disp)


def build_all_priors(rig: RigCalibration, images: dict, frame: int,
                     params: SgmParams | None = None, stereo_matcher=sgm_match,
                     max_range: float = 200.0, half_res: bool = False) -> dict[str, DepthPrior]:
    """One merged DepthPrior per camera from its two ring-neighbor pairs.

    ``images`` maps camera_id to an image (or (image, valid_mask) tuple for
    warped virtual views). Degenerate pairs are skipped; a camera with no
    usable pair gets an all-invalid prior.
    """
    params = params or SgmParams()
    priors: dict[str, DepthPrior] = {}
    for cid in rig.camera_ids():
        model = rig.camera(cid).model
        priors[cid] = DepthPrior(
            np.zeros((model.height, model.width), dtype=np.float32),
            np.zeros((model.height, model.width), dtype=bool),
            ("", ""))
    pairs = [(a, b) for a, b in rig.adjacent_pairs() if a != b]

    def work(pair_ids):
        a, b = pair_ids
        return pair_prior(rig, images, frame, a, b, params, stereo_matcher,
                          max_range, half_res)

    if len(pairs) > 1 and _max_workers() > 1:
        with ThreadPoolExecutor(max_workers=_max_workers()) as pool:
            results = list(pool.map(work, pairs))
    else:
        results = [work(p) for p in pairs]

    # merge in fixed ring order so output is independent of thread count
    for (a, b), res in zip(pairs, results):
        if res is None:
            continue
        prior_a, prior_b = res
        priors[a] = merge_priors(priors[a], prior_a)
        priors[b] = merge_priors(priors[b], prior_b)
    return priors
