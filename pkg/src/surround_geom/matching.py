"""Correspondence extraction: pluggable pair matchers, essential-matrix
RANSAC verification, track merging, and landmark triangulation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .correspond import CorrespondenceGraph, ViewKey, build_graph
from .errors import InsufficientDataError, InvalidArgumentError
from .geometry import PinholeIntrinsics, Pose, pinhole_ray_directions, project_with_mask
from .imaging import bilinear_sample, to_gray_float
from .rig import RigCalibration
from .synth import visible_mask


@dataclass
class MatchResult:
    """Matched pixel pairs between two views.

    ``ids_*`` are per-view keypoint ids that stay stable across pairs, so
    matches from different pairs can be merged into tracks.
    """

    pixels_a: np.ndarray
    pixels_b: np.ndarray
    ids_a: np.ndarray
    ids_b: np.ndarray

    def __len__(self) -> int:
        return len(self.pixels_a)

    def select(self, mask: np.ndarray) -> "MatchResult":
        return MatchResult(self.pixels_a[mask], self.pixels_b[mask],
                           self.ids_a[mask], self.ids_b[mask])


class PairMatcher(Protocol):
    def match_pair(self, view_a: ViewKey, image_a: np.ndarray,
                   view_b: ViewKey, image_b: np.ndarray) -> MatchResult | None:
        """Return candidate matches for one image pair, or None on failure."""


# ---------------------------------------------------------------------------
# Synthetic ground-truth matcher
# ---------------------------------------------------------------------------

class SyntheticMatcher:
    """Projects scene points visible in both views of a pair.

    Keypoint ids are quantized true pixel locations, so the same scene point
    observed through several pairs merges into one track. Optional Gaussian
    pixel noise and wrong-match injection mirror real matcher behavior.
    """

    def __init__(self, scene, rig: RigCalibration, sigma: float = 0.0,
                 outlier_fraction: float = 0.0, outlier_px: float = 20.0,
                 points_per_pair: int = 120, seed: int = 0, max_depth: float = 60.0):
        self.scene = scene
        self.rig = rig
        self.sigma = sigma
        self.outlier_fraction = outlier_fraction
        self.outlier_px = outlier_px
        self.points_per_pair = points_per_pair
        self.seed = seed
        self.max_depth = max_depth
        self._registry: dict[ViewKey, dict[tuple[int, int], int]] = {}

    def _key_id(self, view: ViewKey, true_pixel: np.ndarray) -> int:
        table = self._registry.setdefault(view, {})
        key = (int(round(true_pixel[0] * 4)), int(round(true_pixel[1] * 4)))
        return table.setdefault(key, len(table))

    def match_pair(self, view_a, image_a, view_b, image_b):
        cam_a, frame_a = view_a
        cam_b, frame_b = view_b
        ids = self.rig.camera_ids()
        rng = np.random.default_rng(np.random.SeedSequence(
            [self.seed, ids.index(cam_a), frame_a, ids.index(cam_b), frame_b]))
        model_a = self.rig.camera(cam_a).model
        model_b = self.rig.camera(cam_b).model
        pose_a = self.rig.absolute_pose(cam_a, frame_a)
        pose_b = self.rig.absolute_pose(cam_b, frame_b)

        pa_parts, pb_parts = [], []
        total = 0
        for _ in range(10):
            if total >= self.points_per_pair:
                break
            batch = self.points_per_pair * 4
            px = np.stack([rng.uniform(0, model_a.width - 1, batch),
                           rng.uniform(0, model_a.height - 1, batch)], axis=1)
            d_world = pose_a.rotate(pinhole_ray_directions(model_a, px))
            t = self.scene.intersect(np.broadcast_to(pose_a.translation, d_world.shape),
                                     d_world)
            hit = np.isfinite(t) & (t <= self.max_depth)
            pts = pose_a.translation + np.where(hit, t, 1.0)[:, None] * d_world
            pix_b, _, ok = project_with_mask(model_b, pose_b, pts)
            ok &= hit
            if ok.any():
                ok &= visible_mask(self.scene, pose_b.translation, pts)
            take = np.flatnonzero(ok)[: self.points_per_pair - total]
            pa_parts.append(px[take])
            pb_parts.append(pix_b[take])
            total += len(take)
        if total == 0:
            return None

        pa = np.concatenate(pa_parts)
        pb = np.concatenate(pb_parts)
        ids_a = np.array([self._key_id(view_a, p) for p in pa])
        ids_b = np.array([self._key_id(view_b, p) for p in pb])
        if self.sigma > 0:
            pa = pa + rng.normal(0, self.sigma, pa.shape)
            pb = pb + rng.normal(0, self.sigma, pb.shape)
        if self.outlier_fraction > 0:
            bad = rng.uniform(size=len(pb)) < self.outlier_fraction
            ang = rng.uniform(0, 2 * math.pi, size=len(pb))
            off = self.outlier_px * np.stack([np.cos(ang), np.sin(ang)], axis=1)
            pb = np.where(bad[:, None], pb + off, pb)
        return MatchResult(pa, pb, ids_a, ids_b)


# ---------------------------------------------------------------------------
# Corner + patch matcher
# ---------------------------------------------------------------------------

def _box_filter_1d(a: np.ndarray, window: int, axis: int) -> np.ndarray:
    r = window // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (r + 1, r)
    padded = np.pad(a, pad, mode="edge")
    c = np.cumsum(padded, axis=axis)
    if axis == 0:
        out = c[window:, :] - c[:-window, :]
    else:
        out = c[:, window:] - c[:, :-window]
    return out / window


def _box_filter(a: np.ndarray, window: int) -> np.ndarray:
    return _box_filter_1d(_box_filter_1d(a, window, 0), window, 1)


def highpass(img: np.ndarray, window: int = 9) -> np.ndarray:
    """Remove the local smooth component; patch correlation then compares
    texture detail instead of shared intensity ramps."""
    return img.astype(np.float64) - _box_filter(img.astype(np.float64), window)


def _shi_tomasi_response(img: np.ndarray, window: int = 5) -> np.ndarray:
    gy, gx = np.gradient(img.astype(np.float64))
    ixx, iyy, ixy = gx * gx, gy * gy, gx * gy
    sxx, syy, sxy = (_box_filter(a, window) for a in (ixx, iyy, ixy))
    tr = sxx + syy
    det_term = np.sqrt(np.maximum((sxx - syy) ** 2 + 4 * sxy ** 2, 0.0))
    return (tr - det_term) / 2.0


def _local_maxima(resp: np.ndarray, radius: int) -> np.ndarray:
    out = resp.copy()
    for axis in (0, 1):
        acc = out.copy()
        for shift in range(1, radius + 1):
            acc = np.maximum(acc, np.roll(out, shift, axis=axis))
            acc = np.maximum(acc, np.roll(out, -shift, axis=axis))
        out = acc
    return resp >= out


class CornerPatchMatcher:
    """Shi-Tomasi corners with ZNCC patch descriptors, ratio + mutual tests.

    A deliberately simple classical matcher: adequate on the synthetic
    procedural textures, pluggable for anything stronger.
    """

    def __init__(self, max_corners: int = 1200, patch: int = 11,
                 nms_radius: int = 4, min_similarity: float = 0.6,
                 ratio: float = 0.92, border: int = 8):
        self.max_corners = max_corners
        self.patch = patch
        self.nms_radius = nms_radius
        self.min_similarity = min_similarity
        self.ratio = ratio
        self.border = border
        self._cache: dict[ViewKey, tuple[np.ndarray, np.ndarray]] = {}

    def _features(self, view: ViewKey, image: np.ndarray):
        if view in self._cache:
            return self._cache[view]
        img = to_gray_float(image)
        resp = _shi_tomasi_response(img)
        h, w = img.shape
        b = max(self.border, self.patch // 2 + 1)
        mask = np.zeros_like(resp, dtype=bool)
        mask[b:h - b, b:w - b] = True
        maxima = _local_maxima(resp, self.nms_radius) & mask & (resp > 1e-8)
        ys, xs = np.nonzero(maxima)
        if len(ys) == 0:
            self._cache[view] = (np.zeros((0, 2)), np.zeros((0, 1)))
            return self._cache[view]
        order = np.argsort(resp[ys, xs])[::-1][: self.max_corners]
        ys, xs = ys[order], xs[order]

        # parabolic subpixel refinement on the corner response
        def refine(coord, axis_vals):
            c0, cm, cp = axis_vals
            denom = cm - 2 * c0 + cp
            off = 0.0 if denom >= 0 else 0.5 * (cm - cp) / denom
            return coord + np.clip(off, -0.5, 0.5)

        us = np.empty(len(xs))
        vs = np.empty(len(ys))
        for i, (y, x) in enumerate(zip(ys, xs)):
            us[i] = refine(x, (resp[y, x], resp[y, x - 1], resp[y, x + 1]))
            vs[i] = refine(y, (resp[y, x], resp[y - 1, x], resp[y + 1, x]))

        r = self.patch // 2
        desc = np.empty((len(ys), self.patch * self.patch))
        for i, (y, x) in enumerate(zip(ys, xs)):
            p = img[y - r: y + r + 1, x - r: x + r + 1].ravel()
            p = p - p.mean()
            n = np.linalg.norm(p)
            desc[i] = p / n if n > 1e-12 else p
        feats = (np.stack([us, vs], axis=1), desc)
        self._cache[view] = feats
        return feats

    def match_pair(self, view_a, image_a, view_b, image_b):
        pts_a, desc_a = self._features(view_a, image_a)
        pts_b, desc_b = self._features(view_b, image_b)
        if len(pts_a) < 8 or len(pts_b) < 8:
            return None
        sim = desc_a @ desc_b.T
        best_b = np.argmax(sim, axis=1)
        s1 = sim[np.arange(len(pts_a)), best_b]
        sim_masked = sim.copy()
        sim_masked[np.arange(len(pts_a)), best_b] = -np.inf
        s2 = sim_masked.max(axis=1)
        best_a_of_b = np.argmax(sim, axis=0)
        mutual = best_a_of_b[best_b] == np.arange(len(pts_a))
        keep = mutual & (s1 >= self.min_similarity) & (s2 <= s1 * self.ratio)
        if keep.sum() < 8:
            return None
        ia = np.flatnonzero(keep)
        ib = best_b[keep]
        return MatchResult(pts_a[ia], pts_b[ib], ia, ib)


def _shifted_band(mask: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """Per-row union of the mask shifted right by every offset in [lo, hi]."""
    h, w = mask.shape
    cols = np.arange(w)
    any_row = mask.any(axis=1)
    first = np.where(any_row, mask.argmax(axis=1), w)
    last = np.where(any_row, w - 1 - mask[:, ::-1].argmax(axis=1), -1)
    lo_col = np.clip(first + lo, 0, w)
    hi_col = np.clip(last + hi, -1, w - 1)
    return (cols[None, :] >= lo_col[:, None]) & (cols[None, :] <= hi_col[:, None])


class GuidedCornerMatcher:
    """Corner matching on pose-rectified views with per-view canonical ids.

    Adjacent ring cameras see the overlap from very different angles, which
    defeats raw patch correlation; warping both views onto their common
    rectified plane (using the current, possibly miscalibrated, rig) aligns
    appearance first. Corners are detected once per original view, so the
    same physical feature keeps one id across every image pair it appears
    in and matches merge into long multi-view tracks. Plays the role of a
    learned matcher for classical inputs.
    """

    def __init__(self, rig: RigCalibration, max_corners: int = 2500,
                 dense_candidates: int = 6000, patch: int = 13,
                 nms_radius: int = 2, min_similarity: float = 0.8,
                 ratio: float = 0.95, row_band: float = 24.0,
                 disp_slack: float = 8.0, min_depth: float = 2.0,
                 min_contrast: float = 0.002, snap_px: float = 1.2):
        self.rig = rig
        self.max_corners = max_corners
        self.dense_candidates = dense_candidates
        self.patch = patch
        self.nms_radius = nms_radius
        self.min_similarity = min_similarity
        self.ratio = ratio
        self.row_band = row_band
        self.disp_slack = disp_slack
        self.min_depth = min_depth
        self.min_contrast = min_contrast
        self.snap_px = snap_px
        self._canonical_cache: dict[ViewKey, np.ndarray] = {}
        self._aux_registry: dict[ViewKey, dict[tuple[int, int], int]] = {}

    # -- canonical per-view corners -----------------------------------------
    def _canonical(self, view: ViewKey, image: np.ndarray) -> np.ndarray:
        if view in self._canonical_cache:
            return self._canonical_cache[view]
        img = highpass(to_gray_float(image))
        resp = _shi_tomasi_response(img)
        h, w = img.shape
        b = self.patch // 2 + 2
        mask = np.zeros((h, w), dtype=bool)
        mask[b:h - b, b:w - b] = True
        maxima = _local_maxima(resp, self.nms_radius) & mask & (resp > 1e-10)
        ys, xs = np.nonzero(maxima)
        if len(ys) == 0:
            self._canonical_cache[view] = np.zeros((0, 2))
            return self._canonical_cache[view]
        # spread the budget over a cell grid so weakly textured regions
        # still contribute features
        cell = 24
        bucket = (ys // cell) * (w // cell + 1) + xs // cell
        order = np.lexsort((-resp[ys, xs], bucket))
        ys, xs, bucket = ys[order], xs[order], bucket[order]
        rank = np.arange(len(ys)) - np.searchsorted(bucket, bucket)
        quota = max(2, int(math.ceil(self.max_corners / max(len(set(bucket)), 1))))
        keep = rank < quota
        ys, xs = ys[keep], xs[keep]
        resp_kept = resp[ys, xs]
        order = np.argsort(resp_kept)[::-1][: self.max_corners]
        ys, xs = ys[order], xs[order]

        us = xs.astype(np.float64).copy()
        vs = ys.astype(np.float64).copy()
        for i, (y, x) in enumerate(zip(ys, xs)):
            du = resp[y, x - 1] - 2 * resp[y, x] + resp[y, x + 1]
            if du < 0:
                us[i] += float(np.clip(0.5 * (resp[y, x - 1] - resp[y, x + 1]) / du, -0.5, 0.5))
            dv = resp[y - 1, x] - 2 * resp[y, x] + resp[y + 1, x]
            if dv < 0:
                vs[i] += float(np.clip(0.5 * (resp[y - 1, x] - resp[y + 1, x]) / dv, -0.5, 0.5))
        pts = np.stack([us, vs], axis=1)
        self._canonical_cache[view] = pts
        return pts

    def _aux_id(self, view: ViewKey, n_canonical: int, pixel: np.ndarray) -> int:
        table = self._aux_registry.setdefault(view, {})
        key = (int(round(pixel[0])), int(round(pixel[1])))
        if key not in table:
            table[key] = n_canonical + len(table)
        return table[key]

    # -- dense rect-side candidates ------------------------------------------
    def _detect_dense(self, img: np.ndarray, valid: np.ndarray):
        resp = _shi_tomasi_response(img)
        h, w = img.shape
        b = self.patch // 2 + 2
        mask = np.zeros_like(valid)
        mask[b:h - b, b:w - b] = True
        r = self.patch // 2
        eroded = valid.copy()
        for shift in range(1, r + 1):
            for axis in (0, 1):
                eroded &= np.roll(valid, shift, axis=axis)
                eroded &= np.roll(valid, -shift, axis=axis)
        maxima = _local_maxima(resp, 1) & mask & eroded & (resp > 1e-10)
        ys, xs = np.nonzero(maxima)
        if len(ys) == 0:
            return np.zeros((0, 2)), np.zeros((0, 1))
        order = np.argsort(resp[ys, xs])[::-1][: self.dense_candidates]
        ys, xs = ys[order], xs[order]
        desc, contrast = self._describe_int(img, xs, ys)
        strong = contrast >= self.min_contrast
        return np.stack([xs[strong].astype(np.float64),
                         ys[strong].astype(np.float64)], axis=1), desc[strong]

    def _describe_int(self, img, xs, ys):
        r = self.patch // 2
        offs = np.arange(-r, r + 1)
        yy = ys[:, None, None] + offs[None, :, None]
        xx = xs[:, None, None] + offs[None, None, :]
        patches = img[yy, xx].reshape(len(xs), -1).astype(np.float64)
        return self._normalize_patches(patches)

    def _describe_subpixel(self, img, pts):
        r = self.patch // 2
        offs = np.arange(-r, r + 1, dtype=np.float64)
        uu = pts[:, 0][:, None, None] + offs[None, None, :]
        vv = pts[:, 1][:, None, None] + offs[None, :, None]
        coords = np.stack([np.broadcast_to(uu, (len(pts), self.patch, self.patch)),
                           np.broadcast_to(vv, (len(pts), self.patch, self.patch))], axis=-1)
        values, ok = bilinear_sample(img.astype(np.float32), coords)
        patches = values.reshape(len(pts), -1).astype(np.float64)
        desc, contrast = self._normalize_patches(patches)
        contrast = np.where(ok.reshape(len(pts), -1).all(axis=1), contrast, 0.0)
        return desc, contrast

    @staticmethod
    def _normalize_patches(patches):
        patches = patches - patches.mean(axis=1, keepdims=True)
        norms = np.linalg.norm(patches, axis=1)
        contrast = norms / patches.shape[1] ** 0.5
        return patches / np.where(norms > 1e-12, norms, 1.0)[:, None], contrast

    def _refine(self, img_r: np.ndarray, desc: np.ndarray, x0: int, y0: int,
                radius: int = 2) -> tuple[float, float, float]:
        """Best ZNCC alignment of one left descriptor in a small right window."""
        h, w = img_r.shape
        r = self.patch // 2
        best = (-2.0, float(x0), float(y0))
        for dy in range(-radius, radius + 1):
            for dx in range(-radius, radius + 1):
                y, x = y0 + dy, x0 + dx
                if not (r <= y < h - r and r <= x < w - r):
                    continue
                p = img_r[y - r: y + r + 1, x - r: x + r + 1].ravel().astype(np.float64)
                p = p - p.mean()
                nrm = np.linalg.norm(p)
                if nrm < 1e-12:
                    continue
                s = float(desc @ (p / nrm))
                if s > best[0]:
                    best = (s, float(x), float(y))
        return best

    # -- coordinate transfer ---------------------------------------------------
    @staticmethod
    def _original_to_rect(pts, rot, K, K_rect):
        x = (pts[:, 0] - K.cx) / K.fx
        y = (pts[:, 1] - K.cy) / K.fy
        d_cam = np.stack([x, y, np.ones_like(x)], axis=-1)
        d_rect = d_cam @ rot.T  # rot per point: original frame -> rectified
        z = d_rect[:, 2]
        ok = z > 1e-9
        zz = np.where(ok, z, 1.0)
        out = np.stack([K_rect.fx * d_rect[:, 0] / zz + K_rect.cx,
                        K_rect.fy * d_rect[:, 1] / zz + K_rect.cy], axis=1)
        return out, ok

    @staticmethod
    def _rect_to_original(pts, rot, K, K_rect):
        x = (pts[:, 0] - K_rect.cx) / K_rect.fx
        y = (pts[:, 1] - K_rect.cy) / K_rect.fy
        d_rect = np.stack([x, y, np.ones_like(x)], axis=-1)
        d_cam = d_rect @ rot  # rot.T per point: rectified -> original frame
        z = d_cam[:, 2]
        ok = z > 1e-9
        zz = np.where(ok, z, 1.0)
        out = np.stack([K.fx * d_cam[:, 0] / zz + K.cx,
                        K.fy * d_cam[:, 1] / zz + K.cy], axis=1)
        return out, ok

    def match_pair(self, view_a, image_a, view_b, image_b):
        from .stereo import rectify_pair, warp_to_rectified

        cam_a, frame_a = view_a
        cam_b, frame_b = view_b
        model_a = self.rig.camera(cam_a).model
        model_b = self.rig.camera(cam_b).model
        try:
            pose_a = self.rig.absolute_pose(cam_a, frame_a)
            pose_b = self.rig.absolute_pose(cam_b, frame_b)
            pair = rectify_pair((model_a, pose_a), (model_b, pose_b))
        except Exception:
            return None
        img_a = to_gray_float(image_a)
        img_b = to_gray_float(image_b)
        warped_l, ok_l = warp_to_rectified(img_a, model_a, pair.rot_left, pair.K_rect)
        warped_r, ok_r = warp_to_rectified(img_b, model_b, pair.rot_right, pair.K_rect)
        rect_l = highpass(warped_l)
        rect_r = highpass(warped_r)

        # canonical left corners mapped onto the rectified plane
        canon_a = self._canonical(view_a, image_a)
        if len(canon_a) < 8:
            return None
        rect_a, ok_map = self._original_to_rect(canon_a, pair.rot_left,
                                                model_a, pair.K_rect)
        h, w = rect_l.shape
        iu = np.clip(np.rint(rect_a[:, 0]).astype(np.int64), 0, w - 1)
        iv = np.clip(np.rint(rect_a[:, 1]).astype(np.int64), 0, h - 1)
        in_strip = ok_map & (pair.overlap_mask_left & ok_l)[iv, iu]
        idx_a = np.flatnonzero(in_strip)
        if len(idx_a) < 8:
            return None
        desc_l, contrast_l = self._describe_subpixel(rect_l, rect_a[idx_a])
        strong = contrast_l >= self.min_contrast
        idx_a = idx_a[strong]
        desc_l = desc_l[strong]
        if len(idx_a) < 8:
            return None
        pts_l = rect_a[idx_a]

        # disparity gate from the pair geometry: anything nearer than
        # min_depth is unmatchable anyway
        lo = -self.disp_slack
        hi = pair.K_rect.fx * pair.baseline / self.min_depth + self.disp_slack

        # dense candidates live where left-strip content can land after a
        # disparity shift; the infinity strip alone misses near content
        # whenever the left valid area starts right of the right one
        left_region = pair.overlap_mask_left & ok_l
        region_r = ok_r & (pair.overlap_mask_right
                           | _shifted_band(left_region, -int(math.ceil(hi)),
                                           int(math.ceil(self.disp_slack))))
        pts_r, desc_r = self._detect_dense(rect_r, region_r)
        if len(pts_r) < 8:
            return None

        sim = desc_l @ desc_r.T
        dv = np.abs(pts_l[:, 1:2] - pts_r[:, 1].T)
        du = pts_l[:, 0:1] - pts_r[:, 0].T
        feasible = (dv <= self.row_band) & (du >= lo) & (du <= hi)
        sim = np.where(feasible, sim, -np.inf)
        if not feasible.any():
            return None
        best_b = np.argmax(sim, axis=1)
        s1 = sim[np.arange(len(pts_l)), best_b]
        near = np.abs(pts_r[None, :, 0] - pts_r[best_b, 0][:, None]) <= 2
        near &= np.abs(pts_r[None, :, 1] - pts_r[best_b, 1][:, None]) <= 2
        s2 = np.where(near, -np.inf, sim).max(axis=1)
        with np.errstate(invalid="ignore"):
            keep = (s1 >= self.min_similarity) & \
                (np.where(np.isfinite(s2), s2, -1.0) <= s1 * self.ratio)
        if keep.sum() < 8:
            return None

        refined = []
        for i in np.flatnonzero(keep):
            j = best_b[i]
            s, xr, yr = self._refine(rect_r, desc_l[i], int(pts_r[j, 0]), int(pts_r[j, 1]))
            if s >= self.min_similarity:
                refined.append((i, xr, yr))
        if len(refined) < 8:
            return None
        sel = np.array([r[0] for r in refined])
        rect_b = np.array([[r[1], r[2]] for r in refined])
        orig_b, ok_b = self._rect_to_original(rect_b, pair.rot_right,
                                              model_b, pair.K_rect)
        sel = sel[ok_b]
        orig_b = orig_b[ok_b]
        if len(sel) < 8:
            return None

        # snap right observations to camera b's canonical corners so the
        # same physical feature keeps one id and pixel across pairs
        canon_b = self._canonical(view_b, image_b)
        ids_b = np.empty(len(sel), dtype=np.int64)
        pix_b = orig_b.copy()
        for k, p in enumerate(orig_b):
            if len(canon_b):
                d2 = np.sum((canon_b - p) ** 2, axis=1)
                j = int(np.argmin(d2))
                if d2[j] <= self.snap_px ** 2:
                    ids_b[k] = j
                    pix_b[k] = canon_b[j]
                    continue
            ids_b[k] = self._aux_id(view_b, len(canon_b), p)

        ids_a = idx_a[sel]
        pix_a = canon_a[ids_a]
        # a canonical right corner may win several left corners in one pair;
        # keep the first occurrence to avoid duplicate-view conflicts
        _, first = np.unique(ids_b, return_index=True)
        first = np.sort(first)
        return MatchResult(pix_a[first], pix_b[first],
                           ids_a[first], ids_b[first])

# ---------------------------------------------------------------------------
# Essential-matrix RANSAC (normalized 8-point solver, MSAC scoring)
# ---------------------------------------------------------------------------

def _eight_point(x1: np.ndarray, x2: np.ndarray) -> np.ndarray | None:
    """Essential matrix from >= 8 normalized correspondences."""
    A = np.concatenate([
        x2[:, 0:1] * x1, x2[:, 1:2] * x1, x1,
    ], axis=1)
    try:
        _, _, vt = np.linalg.svd(A)
    except np.linalg.LinAlgError:
        return None
    E = vt[-1].reshape(3, 3)
    u, s, vt = np.linalg.svd(E)
    sigma = (s[0] + s[1]) / 2.0
    return u @ np.diag([sigma, sigma, 0.0]) @ vt


def _sampson_px(F: np.ndarray, p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    """First-order geometric (Sampson) distance in pixels."""
    x1 = np.concatenate([p1, np.ones((len(p1), 1))], axis=1)
    x2 = np.concatenate([p2, np.ones((len(p2), 1))], axis=1)
    Fx1 = x1 @ F.T
    Ftx2 = x2 @ F
    num = np.sum(x2 * Fx1, axis=1) ** 2
    den = Fx1[:, 0] ** 2 + Fx1[:, 1] ** 2 + Ftx2[:, 0] ** 2 + Ftx2[:, 1] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        d2 = np.where(den > 0, num / den, np.inf)
    return np.sqrt(d2)


def ransac_essential(pixels_a: np.ndarray, pixels_b: np.ndarray,
                     K_a: PinholeIntrinsics, K_b: PinholeIntrinsics,
                     threshold_px: float = 1.0, confidence: float = 0.999,
                     max_iters: int = 4000, rng: np.random.Generator | None = None
                     ) -> tuple[np.ndarray, np.ndarray] | None:
    """MSAC over the essential matrix; returns (E, inlier_mask) or None."""
    n = len(pixels_a)
    if n < 8:
        return None
    rng = rng or np.random.default_rng(0)
    Ka_inv = np.linalg.inv(K_a.K())
    Kb_inv = np.linalg.inv(K_b.K())
    h1 = np.concatenate([pixels_a, np.ones((n, 1))], axis=1)
    h2 = np.concatenate([pixels_b, np.ones((n, 1))], axis=1)
    x1 = h1 @ Ka_inv.T
    x2 = h2 @ Kb_inv.T

    best_score = np.inf
    best_E = None
    best_mask = None
    t2 = threshold_px ** 2
    iters = max_iters
    it = 0
    while it < iters:
        sample = rng.choice(n, size=8, replace=False)
        E = _eight_point(x1[sample], x2[sample])
        it += 1
        if E is None:
            continue
        F = Kb_inv.T @ E @ Ka_inv
        d = _sampson_px(F, pixels_a, pixels_b)
        inliers = d < threshold_px
        score = np.sum(np.minimum(d ** 2, t2))
        if score < best_score:
            # the stopping rule must use the raw minimal-sample consensus;
            # a locally-optimized consensus overstates the easy-sample rate
            w_raw = float(inliers.mean())
            # local optimization: refit on the consensus set, keep if better
            for _ in range(2):
                if inliers.sum() < 8:
                    break
                E2 = _eight_point(x1[inliers], x2[inliers])
                if E2 is None:
                    break
                F2 = Kb_inv.T @ E2 @ Ka_inv
                d2 = _sampson_px(F2, pixels_a, pixels_b)
                score2 = np.sum(np.minimum(d2 ** 2, t2))
                if score2 >= score:
                    break
                E, d, score = E2, d2, score2
                inliers = d < threshold_px
            best_score = score
            best_E = E
            best_mask = inliers
            if w_raw >= 1.0 - 1e-12:
                break
            # shrink the budget only in the high-inlier regime: with a
            # dominant scene plane, a mid-sized degenerate consensus would
            # otherwise cut the search before a non-degenerate sample occurs
            if w_raw >= 0.8:
                denom = math.log1p(-min(w_raw ** 8, 1.0 - 1e-15))
                if denom < 0:
                    needed = math.log(1 - confidence) / denom
                    iters = min(iters, max(int(math.ceil(needed)), 1))
    if best_E is None or best_mask.sum() < 8:
        return None
    # final refinement: refit on the full consensus and on tightened cores
    # (the latter stop borderline wrong matches from tilting the model);
    # accept candidates only when the MSAC score improves
    for _ in range(10):
        F = Kb_inv.T @ best_E @ Ka_inv
        d_best = _sampson_px(F, pixels_a, pixels_b)
        best_msac = np.sum(np.minimum(d_best ** 2, t2))
        improved = False
        for shrink in (1.0, 0.5, 0.25):
            core = d_best < threshold_px * shrink
            if core.sum() < 8:
                continue
            cand = _eight_point(x1[core], x2[core])
            if cand is None:
                continue
            F = Kb_inv.T @ cand @ Ka_inv
            d = _sampson_px(F, pixels_a, pixels_b)
            score = np.sum(np.minimum(d ** 2, t2))
            mask = d < threshold_px
            if mask.sum() >= 8 and score < best_msac - 1e-12:
                best_E, best_mask, best_msac = cand, mask, score
                improved = True
                break
        if not improved:
            break
    return best_E, best_mask


# ---------------------------------------------------------------------------
# Triangulation
# ---------------------------------------------------------------------------

def triangulate_dlt(pixels: np.ndarray, cameras: list[tuple[PinholeIntrinsics, Pose]]
                    ) -> np.ndarray | None:
    """Linear multi-view triangulation; None when the system is degenerate."""
    if len(pixels) < 2:
        return None
    rows = []
    for (u, v), (K, pose) in zip(pixels, cameras):
        inv = pose.inverse()
        P = K.K() @ np.concatenate([inv.rotation_matrix(), inv.translation[:, None]], axis=1)
        rows.append(u * P[2] - P[0])
        rows.append(v * P[2] - P[1])
    A = np.asarray(rows)
    try:
        _, s, vt = np.linalg.svd(A)
    except np.linalg.LinAlgError:
        return None
    X = vt[-1]
    if abs(X[3]) < 1e-12:
        return None
    return X[:3] / X[3]


# ---------------------------------------------------------------------------
# Graph extraction
# ---------------------------------------------------------------------------

class _UnionFind:
    def __init__(self):
        self.parent: dict = {}

    def find(self, x):
        self.parent.setdefault(x, x)
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def extract_correspondences(images: dict[ViewKey, np.ndarray], rig: RigCalibration,
                            matcher: PairMatcher, ransac_threshold: float = 1.0,
                            beta: int = 200, frames: list[int] | None = None,
                            seed: int = 0, init_reproj_px: float = 30.0,
                            temporal_gap: int = 1) -> CorrespondenceGraph:
    """Verified multi-view correspondence graph over all adjacent-camera pairs.

    Every ring-adjacent camera pair is matched across all frame pairs,
    verified with essential-matrix RANSAC, dropped when fewer than ``beta``
    matches survive, merged into tracks, and triangulated with the current
    rig poses. Raises :class:`InsufficientDataError` when fewer than two
    image pairs survive.
    """
    if frames is None:
        frames = sorted({f for (_, f) in images})
    if len(frames) < 2:
        raise InsufficientDataError("need at least 2 frames")
    for cam in rig.cameras:
        if not isinstance(cam.model, PinholeIntrinsics):
            raise InvalidArgumentError(
                "correspondence extraction requires pinhole cameras; "
                "split fisheye rigs first")

    camera_ids = rig.camera_ids()
    uf = _UnionFind()
    node_pixel: dict = {}
    edges: list = []
    pair_counts: dict = {}
    surviving = 0
    view_pairs: list[tuple[ViewKey, ViewKey]] = []
    for cam_a, cam_b in rig.adjacent_pairs():
        if cam_a == cam_b:
            continue
        for ta in frames:
            for tb in frames:
                view_pairs.append(((cam_a, ta), (cam_b, tb)))
    # same-camera temporal pairs condition the trajectory and landmark
    # depths; without them the small ring baselines leave a near-degenerate
    # rotation/translation mode against distant scenery
    for cid in camera_ids:
        for i, ta in enumerate(frames):
            for tb in frames[i + 1:]:
                if 0 < tb - ta <= temporal_gap:
                    view_pairs.append(((cid, ta), (cid, tb)))

    for va, vb in view_pairs:
        (cam_a, ta), (cam_b, tb) = va, vb
        if va not in images or vb not in images:
            continue
        K_a = rig.camera(cam_a).model
        K_b = rig.camera(cam_b).model
        result = matcher.match_pair(va, images[va], vb, images[vb])
        if result is None or len(result) < 8:
            continue
        rng = np.random.default_rng(np.random.SeedSequence(
            [seed, camera_ids.index(cam_a), ta, camera_ids.index(cam_b), tb]))
        verdict = ransac_essential(result.pixels_a, result.pixels_b, K_a, K_b,
                                   threshold_px=ransac_threshold, rng=rng)
        if verdict is None:
            continue
        _, inliers = verdict
        count = int(inliers.sum())
        pair_counts[(va, vb)] = count
        if count < beta:
            continue
        surviving += 1
        kept = result.select(inliers)
        for pa, pb, ia, ib in zip(kept.pixels_a, kept.pixels_b,
                                  kept.ids_a, kept.ids_b):
            na, nb = (va, int(ia)), (vb, int(ib))
            node_pixel.setdefault(na, (float(pa[0]), float(pa[1])))
            node_pixel.setdefault(nb, (float(pb[0]), float(pb[1])))
            edges.append((na, nb))
            uf.union(na, nb)

    if surviving < 2:
        raise InsufficientDataError(
            f"only {surviving} image pairs survived filtering (need >= 2)")

    components: dict = {}
    for node in node_pixel:
        components.setdefault(uf.find(node), []).append(node)

    # clean components become multi-view tracks; components where one view
    # appears twice were glued by at least one wrong match, so fall back to
    # their individual verified 2-view matches instead of discarding them
    tracks: list[list] = []
    conflicted_roots = set()
    for root, nodes in components.items():
        views = [n[0] for n in nodes]
        if len(nodes) >= 2 and len(set(views)) == len(views):
            tracks.append(nodes)
        else:
            conflicted_roots.add(root)
    seen_edges = set()
    for na, nb in edges:
        if uf.find(na) in conflicted_roots and na[0] != nb[0]:
            key = (na, nb)
            if key not in seen_edges:
                seen_edges.add(key)
                tracks.append([na, nb])

    records = []
    landmarks = []
    for nodes in tracks:
        cams = []
        pixels = []
        for (view, _kp) in nodes:
            cid, fid = view
            cams.append((rig.camera(cid).model, rig.absolute_pose(cid, fid)))
            pixels.append(node_pixel[(view, _kp)])
        X = triangulate_dlt(np.asarray(pixels), cams)
        if X is None:
            continue
        ok = True
        for (K, pose), (u, v) in zip(cams, pixels):
            p_cam = pose.inverse().transform(X)
            if p_cam[2] <= 1e-6:
                ok = False
                break
            # tracks inconsistent with the current calibration (way beyond
            # the expected miscalibration) are wrong matches, not signal
            pu = K.fx * p_cam[0] / p_cam[2] + K.cx
            pv = K.fy * p_cam[1] / p_cam[2] + K.cy
            if (pu - u) ** 2 + (pv - v) ** 2 > init_reproj_px ** 2:
                ok = False
                break
        if not ok:
            continue
        idx = len(landmarks)
        landmarks.append(X)
        for (view, _kp) in nodes:
            u, v = node_pixel[(view, _kp)]
            records.append((view[0], view[1], idx, u, v))

    if len(landmarks) == 0:
        raise InsufficientDataError("no triangulated landmarks")
    return build_graph(records, np.asarray(landmarks), camera_ids, frames,
                       pair_counts=pair_counts)
