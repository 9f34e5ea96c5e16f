"""Image sampling helpers shared by the warping stages."""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError


def bilinear_sample(image: np.ndarray, coords: np.ndarray,
                    source_mask: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``image`` at continuous (u, v) positions.

    Returns ``(values, valid)``; a sample is valid only when all four
    neighboring pixels are inside the image (and inside ``source_mask`` when
    given). Out-of-bounds samples are never clamped.
    """
    h, w = image.shape[:2]
    u = coords[..., 0]
    v = coords[..., 1]
    u0 = np.floor(u).astype(np.int64)
    v0 = np.floor(v).astype(np.int64)
    inside = (u0 >= 0) & (v0 >= 0) & (u0 + 1 <= w - 1) & (v0 + 1 <= h - 1) \
        & np.isfinite(u) & np.isfinite(v)
    u0c = np.clip(u0, 0, w - 2)
    v0c = np.clip(v0, 0, h - 2)
    fu = u - u0c
    fv = v - v0c
    tl = image[v0c, u0c]
    tr = image[v0c, u0c + 1]
    bl = image[v0c + 1, u0c]
    br = image[v0c + 1, u0c + 1]
    values = (tl * (1 - fu) * (1 - fv) + tr * fu * (1 - fv)
              + bl * (1 - fu) * fv + br * fu * fv)
    valid = inside
    if source_mask is not None:
        m = source_mask
        ok = m[v0c, u0c] & m[v0c, u0c + 1] & m[v0c + 1, u0c] & m[v0c + 1, u0c + 1]
        valid = valid & ok
    return values.astype(np.float32), valid


def box_downsample2(image: np.ndarray) -> np.ndarray:
    """2x2 box filter downsample (truncates odd trailing row/column)."""
    h, w = image.shape[:2]
    h2, w2 = h // 2, w // 2
    im = image[: h2 * 2, : w2 * 2].astype(np.float64)
    return ((im[0::2, 0::2] + im[0::2, 1::2] + im[1::2, 0::2] + im[1::2, 1::2]) / 4.0
            ).astype(np.float32)


def to_gray_float(image: np.ndarray) -> np.ndarray:
    """Normalize an image array to float32 grayscale in [0, 1]."""
    arr = np.asarray(image)
    if arr.ndim == 3:
        arr = arr[..., :3].mean(axis=-1)
    if arr.dtype == np.uint8:
        return (arr.astype(np.float32) / 255.0)
    if arr.dtype == np.uint16:
        return (arr.astype(np.float32) / 65535.0)
    if not np.issubdtype(arr.dtype, np.floating):
        raise InvalidArgumentError(f"unsupported image dtype {arr.dtype}")
    return arr.astype(np.float32)
