"""Depth evaluation metrics and the depth-prior supervision term."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, NoValidPixelsError
from .geometry import PinholeIntrinsics, Pose

DEFAULT_GT_THRESHOLDS = (1.0, 3.0, 5.0)


@dataclass
class DepthEvalResult:
    abs_rel: float
    sq_rel: float
    rmse: float
    mae: float
    delta1: float
    delta2: float
    delta3: float
    gt_n: dict[float, float] = field(default_factory=dict)
    n_valid: int = 0

    def to_dict(self) -> dict:
        out = {
            "abs_rel": self.abs_rel, "sq_rel": self.sq_rel,
            "rmse": self.rmse, "mae": self.mae,
            "delta1": self.delta1, "delta2": self.delta2, "delta3": self.delta3,
            "n_valid": self.n_valid,
        }
        for n, frac in sorted(self.gt_n.items()):
            out[f">{n:g}"] = frac
        return out


def evaluate(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray | None = None,
             max_range: float = 200.0,
             gt_thresholds: tuple = DEFAULT_GT_THRESHOLDS) -> DepthEvalResult:
    """Standard depth error metrics over pixels with usable ground truth.

    Valid pixels are those inside ``mask`` (if given) whose ground truth lies
    in (0, max_range]. Raises :class:`NoValidPixelsError` on an empty set.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise InvalidArgumentError("pred and gt shapes differ")
    valid = (gt > 0) & (gt <= max_range)
    if mask is not None:
        if mask.shape != gt.shape:
            raise InvalidArgumentError("mask shape differs")
        valid &= mask.astype(bool)
    if not valid.any():
        raise NoValidPixelsError("no pixels with usable ground truth")
    p = pred[valid]
    g = gt[valid]
    err = p - g
    ratio = np.maximum(p / g, np.where(p > 0, g / p, np.inf))
    gt_n = {float(n): float((np.abs(err) > n).mean()) for n in gt_thresholds}
    return DepthEvalResult(
        abs_rel=float(np.mean(np.abs(err) / g)),
        sq_rel=float(np.mean(err ** 2 / g)),
        rmse=float(np.sqrt(np.mean(err ** 2))),
        mae=float(np.mean(np.abs(err))),
        delta1=float((ratio < 1.25).mean()),
        delta2=float((ratio < 1.25 ** 2).mean()),
        delta3=float((ratio < 1.25 ** 3).mean()),
        gt_n=gt_n,
        n_valid=int(valid.sum()),
    )


@dataclass
class DepConResult:
    dep_con: float
    abs_rel_warped: float
    abs_rel_native: float
    n_valid: int


def warp_depth(depth_a: np.ndarray, valid_a: np.ndarray,
               cam_a: tuple[PinholeIntrinsics, Pose],
               cam_b: tuple[PinholeIntrinsics, Pose]) -> tuple[np.ndarray, np.ndarray]:
    """Reproject camera-a depth into camera b's image (unproject, transform,
    z-buffered splat). Returns (depth_in_b, valid_in_b)."""
    K_a, pose_a = cam_a
    K_b, pose_b = cam_b
    vs, us = np.nonzero(valid_a & (depth_a > 0))
    out = np.zeros((K_b.height, K_b.width), dtype=np.float64)
    ok = np.zeros((K_b.height, K_b.width), dtype=bool)
    if len(us) == 0:
        return out, ok
    z = depth_a[vs, us].astype(np.float64)
    x = (us - K_a.cx) / K_a.fx * z
    y = (vs - K_a.cy) / K_a.fy * z
    pts = pose_a.transform(np.stack([x, y, z], axis=-1))
    p_cam = pose_b.inverse().transform(pts)
    zb = p_cam[:, 2]
    front = zb > 1e-9
    ub = np.rint(K_b.fx * p_cam[front, 0] / zb[front] + K_b.cx).astype(np.int64)
    vb = np.rint(K_b.fy * p_cam[front, 1] / zb[front] + K_b.cy).astype(np.int64)
    zb = zb[front]
    inb = (ub >= 0) & (ub < K_b.width) & (vb >= 0) & (vb < K_b.height)
    ub, vb, zb = ub[inb], vb[inb], zb[inb]
    order = np.lexsort((-zb, vb * K_b.width + ub))
    flat = vb[order] * K_b.width + ub[order]
    keep = np.ones(len(flat), dtype=bool)
    keep[:-1] = flat[:-1] != flat[1:]
    out.ravel()[flat[keep]] = zb[order][keep]
    ok.ravel()[flat[keep]] = True
    return out, ok


def depth_consistency(depth_a: np.ndarray, valid_a: np.ndarray,
                      depth_b: np.ndarray, valid_b: np.ndarray,
                      cam_a: tuple[PinholeIntrinsics, Pose],
                      cam_b: tuple[PinholeIntrinsics, Pose],
                      gt_b: np.ndarray, max_range: float = 200.0) -> DepConResult:
    """Cross-view consistency: warp camera-a depth onto camera b's plane and
    score both the warped and the native depth against ground truth on the
    mutually valid overlap; the reported value is the mean of the two
    absolute relative errors.
    """
    warped, warped_ok = warp_depth(depth_a, valid_a, cam_a, cam_b)
    mutual = warped_ok & valid_b.astype(bool) & (gt_b > 0) & (gt_b <= max_range)
    if not mutual.any():
        raise NoValidPixelsError("no mutually valid overlap between the views")
    g = gt_b[mutual]
    ar_warped = float(np.mean(np.abs(warped[mutual] - g) / g))
    ar_native = float(np.mean(np.abs(depth_b[mutual] - g) / g))
    return DepConResult(
        dep_con=(ar_warped + ar_native) / 2.0,
        abs_rel_warped=ar_warped,
        abs_rel_native=ar_native,
        n_valid=int(mutual.sum()),
    )


def l1_prior_loss(pred: np.ndarray, prior_depth: np.ndarray,
                  prior_valid: np.ndarray, lam: float = 0.005) -> float:
    """Prior-supervision term: lam * mean |pred - prior| over prior-valid
    pixels; 0 when the prior is empty."""
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape != prior_depth.shape:
        raise InvalidArgumentError("pred and prior shapes differ")
    m = prior_valid.astype(bool)
    if not m.any():
        return 0.0
    return float(lam * np.mean(np.abs(pred[m] - prior_depth[m])))
