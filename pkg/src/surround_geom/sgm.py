"""Semi-global stereo matching on rectified pairs.

Census-transform matching cost, scanline aggregation with P1/P2 smoothness
penalties, winner-take-all with parabolic subpixel refinement, and a
left-right consistency check. Pure numpy, deterministic for fixed params.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .imaging import to_gray_float

# aggregation directions: 5 default paths (4 axis-aligned + 1 diagonal), 8 optional
_PATHS_5 = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1)]
_PATHS_8 = _PATHS_5 + [(-1, 1), (1, -1), (-1, -1)]


@dataclass(frozen=True)
class SgmParams:
    window: int = 5
    p1: int = 10
    p2: int = 120
    num_disp: int = 128
    min_disp: int = 0
    lr_max_diff: float = 1.0
    paths: int = 5
    # minimum relative cost gap to the second-best disparity; rejects
    # ambiguous (e.g. textureless) pixels that a pure LR check lets through
    uniqueness: float = 0.05

    def __post_init__(self):
        if self.window % 2 == 0 or self.window < 3:
            raise InvalidArgumentError("census window must be odd and >= 3")
        if self.num_disp < 16:
            raise InvalidArgumentError("num_disp must be >= 16")
        if self.paths not in (5, 8):
            raise InvalidArgumentError("paths must be 5 or 8")
        if self.p2 < self.p1 or self.p1 < 0:
            raise InvalidArgumentError("penalties must satisfy 0 <= P1 <= P2")


@dataclass
class DisparityMap:
    """Subpixel disparities with a validity grid.

    ``values[y, x] = d`` means the left pixel (y, x) corresponds to
    (y, x - d) in the right image; invalid pixels carry 0. When produced by
    :func:`sgm_match` the right-reference map (right pixel x matches left
    x + d) is carried along, so each view can be back-projected from its own
    viewpoint.
    """

    values: np.ndarray
    valid: np.ndarray
    min_disp: int = 0
    num_disp: int = field(default=128)
    right_values: np.ndarray | None = None
    right_valid: np.ndarray | None = None

    @property
    def max_disp(self) -> int:
        return self.min_disp + self.num_disp - 1


def census_transform(image: np.ndarray, window: int) -> np.ndarray:
    """Per-pixel census bit string (neighbor darker than center -> 1)."""
    img = to_gray_float(image)
    r = window // 2
    padded = np.pad(img, r, mode="edge")
    h, w = img.shape
    code = np.zeros((h, w), dtype=np.uint64)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx == 0:
                continue
            code <<= np.uint64(1)
            nb = padded[r + dy: r + dy + h, r + dx: r + dx + w]
            code |= (nb < img).astype(np.uint64)
    return code


def _cost_volume(census_ref: np.ndarray, census_other: np.ndarray,
                 min_disp: int, num_disp: int, max_cost: int) -> np.ndarray:
    """Hamming-distance volume (H, W, D); out-of-range columns get max_cost."""
    h, w = census_ref.shape
    cost = np.full((h, w, num_disp), max_cost, dtype=np.uint8)
    for i in range(num_disp):
        d = min_disp + i
        lo = max(0, d)
        hi = min(w, w + d)
        if lo >= hi:
            continue
        ham = np.bitwise_count(census_ref[:, lo:hi] ^ census_other[:, lo - d: hi - d])
        cost[:, lo:hi, i] = ham.astype(np.uint8)
    return cost


def _dp_step(prev: np.ndarray, cost_slice: np.ndarray, p1: int, p2: int) -> np.ndarray:
    """One aggregation step along a path: prev and cost_slice are (N, D)."""
    m = prev.min(axis=1)
    cand = prev.copy()
    cand[:, :-1] = np.minimum(cand[:, :-1], prev[:, 1:] + p1)
    cand[:, 1:] = np.minimum(cand[:, 1:], prev[:, :-1] + p1)
    np.minimum(cand, (m + p2)[:, None], out=cand)
    return cost_slice + cand - m[:, None]


def _aggregate_direction(cost: np.ndarray, dx: int, dy: int, p1: int, p2: int,
                         out: np.ndarray) -> None:
    h, w, _ = cost.shape
    cost = cost.astype(np.int32)
    if dy == 0:
        xs = range(w) if dx > 0 else range(w - 1, -1, -1)
        first = True
        prev = None
        for x in xs:
            cur = cost[:, x, :]
            prev = cur if first else _dp_step(prev, cur, p1, p2)
            first = False
            out[:, x, :] += prev
        return
    ys = range(h) if dy > 0 else range(h - 1, -1, -1)
    first = True
    prev = None
    for y in ys:
        cur = cost[y]
        if first:
            acc = cur.copy()
        else:
            if dx == 0:
                shifted = prev
                acc = _dp_step(shifted, cur, p1, p2)
            else:
                shifted = np.empty_like(prev)
                if dx > 0:
                    shifted[dx:] = prev[:-dx]
                    shifted[:dx] = 0
                else:
                    shifted[:dx] = prev[-dx:]
                    shifted[dx:] = 0
                acc = _dp_step(shifted, cur, p1, p2)
                # path enters the image at this column: restart from raw cost
                if dx > 0:
                    acc[:dx] = cur[:dx]
                else:
                    acc[dx:] = cur[dx:]
        out[y] += acc
        prev = acc
        first = False


def _aggregate(cost: np.ndarray, params: SgmParams) -> np.ndarray:
    h, w, d = cost.shape
    out = np.zeros((h, w, d), dtype=np.int32)
    directions = _PATHS_5 if params.paths == 5 else _PATHS_8
    for dx, dy in directions:
        _aggregate_direction(cost, dx, dy, params.p1, params.p2, out)
    return out


def _wta_subpixel(agg: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Winner-take-all indices plus parabolic subpixel offsets."""
    best = np.argmin(agg, axis=2)
    h, w, d = agg.shape
    yy, xx = np.mgrid[0:h, 0:w]
    c0 = agg[yy, xx, best]
    interior = (best > 0) & (best < d - 1)
    bm = np.clip(best - 1, 0, d - 1)
    bp = np.clip(best + 1, 0, d - 1)
    cm = agg[yy, xx, bm]
    cp = agg[yy, xx, bp]
    denom = (cm - 2 * c0 + cp).astype(np.float64)
    offset = np.where(interior & (denom > 0), (cm - cp) / np.where(denom == 0, 1, 2 * denom), 0.0)
    return best, np.clip(offset, -0.5, 0.5)


def _uniqueness_mask(cost: np.ndarray, best: np.ndarray, ratio: float) -> np.ndarray:
    """Ambiguity test on the raw (data) cost: the chosen disparity must beat
    every non-adjacent alternative by a margin, which rejects textureless
    pixels whose smoothness-only minimum would pass the LR check."""
    h, w, d = cost.shape
    yy, xx = np.mgrid[0:h, 0:w]
    cost = cost.astype(np.int32)
    c1 = cost[yy, xx, best]
    masked = cost.copy()
    for off in (-1, 0, 1):
        idx = np.clip(best + off, 0, d - 1)
        masked[yy, xx, idx] = np.iinfo(np.int32).max
    c2 = masked.min(axis=2)
    return (c2.astype(np.int64) - c1) >= np.maximum(1, (ratio * c1).astype(np.int64))


def median_consistency_filter(disp: DisparityMap, max_dev: float = 1.5,
                              min_support: int = 5) -> DisparityMap:
    """Invalidate pixels that disagree with the median of their valid 3x3
    neighborhood or have too few valid neighbors; removes splatter left
    behind by the LR check at occlusion boundaries."""
    h, w = disp.values.shape
    stack = np.full((9, h, w), np.nan)
    k = 0
    padded_v = np.pad(disp.values, 1, mode="constant")
    padded_m = np.pad(disp.valid, 1, mode="constant")
    for dy in range(3):
        for dx in range(3):
            vals = padded_v[dy: dy + h, dx: dx + w]
            msk = padded_m[dy: dy + h, dx: dx + w]
            stack[k] = np.where(msk, vals, np.nan)
            k += 1
    support = np.sum(~np.isnan(stack), axis=0)
    stack[0] = np.where(np.isnan(stack[0]) & (support == 0), 0.0, stack[0])
    with np.errstate(invalid="ignore"):
        med = np.nanmedian(stack, axis=0)
        dev_ok = np.abs(disp.values - med) <= max_dev
    valid = disp.valid & dev_ok & (support >= min_support)
    return DisparityMap(np.where(valid, disp.values, 0.0).astype(np.float32),
                        valid, disp.min_disp, disp.num_disp)


def sgm_match(left: np.ndarray, right: np.ndarray,
              params: SgmParams | None = None) -> DisparityMap:
    """Dense disparity of ``left`` w.r.t. ``right``.

    Both images must share a rectified row geometry and an identical shape.
    Valid pixels pass the left-right consistency check (within
    ``lr_max_diff``) and the uniqueness test.
    """
    params = params or SgmParams()
    left = to_gray_float(left)
    right = to_gray_float(right)
    if left.shape != right.shape:
        raise InvalidArgumentError("left/right images must have the same shape")

    bits = params.window * params.window - 1
    cl = census_transform(left, params.window)
    cr = census_transform(right, params.window)

    cost_l = _cost_volume(cl, cr, params.min_disp, params.num_disp, bits)
    agg_l = _aggregate(cost_l, params)
    best_l, off_l = _wta_subpixel(agg_l)
    del agg_l
    unique_l = _uniqueness_mask(cost_l, best_l, params.uniqueness)
    del cost_l
    disp_l = best_l + off_l + params.min_disp

    # right-reference volume: right pixel x matches left pixel x + d.
    # Computed on column-flipped views so the same minus-d kernel applies.
    cost_rf = _cost_volume(cr[:, ::-1], cl[:, ::-1], params.min_disp, params.num_disp, bits)
    agg_rf = _aggregate(cost_rf, params)
    best_rf, off_rf = _wta_subpixel(agg_rf)
    del agg_rf
    unique_r = _uniqueness_mask(cost_rf, best_rf, params.uniqueness)[:, ::-1]
    del cost_rf
    disp_r = (best_rf + off_rf)[:, ::-1] + params.min_disp

    h, w = left.shape
    xx = np.arange(w)[None, :]

    xr = np.rint(xx - disp_l).astype(np.int64)
    in_l = (xr >= 0) & (xr <= w - 1)
    dr_at = np.take_along_axis(disp_r, np.clip(xr, 0, w - 1), axis=1)
    valid_l = in_l & (np.abs(disp_l - dr_at) <= params.lr_max_diff) & unique_l

    xl = np.rint(xx + disp_r).astype(np.int64)
    in_r = (xl >= 0) & (xl <= w - 1)
    dl_at = np.take_along_axis(disp_l, np.clip(xl, 0, w - 1), axis=1)
    valid_r = in_r & (np.abs(disp_r - dl_at) <= params.lr_max_diff) & unique_r

    return DisparityMap(
        np.where(valid_l, disp_l, 0.0).astype(np.float32), valid_l,
        params.min_disp, params.num_disp,
        right_values=np.where(valid_r, disp_r, 0.0).astype(np.float32),
        right_valid=valid_r)
