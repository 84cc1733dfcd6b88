"""Low-level tensor operations shared by every attribution method and metric.

Images are float arrays of shape (3, H, W) with values in [0, 1], masks are
(H, W) boolean arrays, heatmaps are (H, W) float arrays. Pixel sets are
(n, 2) integer arrays of (row, col) pairs whose row order is meaningful.
"""

from __future__ import annotations

import numpy as np

# Global denominator guard used by every ratio in the metric suite.
EPS = 1e-6


class InvalidInputError(ValueError):
    """An argument violates a documented precondition."""


class EmptyRegionError(ValueError):
    """A pixel selection region is empty; callers skip the sample."""


def validate_image(image) -> np.ndarray:
    """Check the (3, H, W) / finite / [0, 1] image contract and return float64 data."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise InvalidInputError(f"expected (3, H, W) image, got shape {image.shape}")
    if not np.all(np.isfinite(image)):
        raise InvalidInputError("image contains non-finite values")
    if image.min() < 0.0 or image.max() > 1.0:
        raise InvalidInputError("image values outside [0, 1]")
    return image


def minmax_normalize(raw) -> np.ndarray:
    """Rescale a finite map to [0, 1]; constant maps become all zeros.

    A constant map carries no ranking information, so it is mapped to zeros
    rather than ones, which makes downstream top-k selection fall through to
    the deterministic index tie-break.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(raw)):
        raise InvalidInputError("cannot normalize a map with non-finite values")
    lo = raw.min()
    hi = raw.max()
    if hi == lo:
        return np.zeros_like(raw)
    return (raw - lo) / (hi - lo)


def topk_select(heatmap, mask, k: float, region: str = "inside") -> np.ndarray:
    """Pick the max(1, floor(k * |region|)) highest-valued pixels of a region.

    ``region`` is "inside" (pixels where mask is set) or "outside" (its
    complement). Ties are broken by ascending row-major linear index, which
    makes the selection deterministic across runs and platforms. Returns an
    ordered (n, 2) array of (row, col) pairs.
    """
    heatmap = np.asarray(heatmap, dtype=np.float64)
    if not 0.0 < k <= 1.0:
        raise InvalidInputError(f"k must be in (0, 1], got {k}")
    if region not in ("inside", "outside"):
        raise InvalidInputError(f"region must be 'inside' or 'outside', got {region!r}")
    mask = np.asarray(mask).astype(bool)
    if mask.shape != heatmap.shape:
        raise InvalidInputError("mask and heatmap shapes differ")
    selector = mask if region == "inside" else ~mask
    linear = np.flatnonzero(selector.ravel())
    if linear.size == 0:
        raise EmptyRegionError(f"{region} region is empty")
    count = max(1, int(k * linear.size))
    values = heatmap.ravel()[linear]
    # lexsort: last key is primary, so order by value descending then index ascending
    order = np.lexsort((linear, -values))[:count]
    chosen = linear[order]
    rows, cols = np.divmod(chosen, heatmap.shape[1])
    return np.stack([rows, cols], axis=1)


def occlude(image, pixels) -> np.ndarray:
    """Replace the listed pixels with the per-channel mean of the input image.

    The fill value is always computed from the image passed in, never from a
    previously occluded copy, so only single application is meaningful.
    An empty pixel set returns an identical copy.
    """
    image = np.asarray(image, dtype=np.float64)
    out = image.copy()
    pixels = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
    if pixels.shape[0] == 0:
        return out
    rows, cols = pixels[:, 0], pixels[:, 1]
    height, width = image.shape[1:]
    if rows.min() < 0 or cols.min() < 0 or rows.max() >= height or cols.max() >= width:
        raise InvalidInputError("pixel set out of bounds")
    fill = image.mean(axis=(1, 2))
    out[:, rows, cols] = fill[:, None]
    return out


def _axis_coords(src: int, dst: int):
    """Half-pixel-center source coordinates for one axis, clamped to borders."""
    scale = src / dst
    coords = (np.arange(dst, dtype=np.float64) + 0.5) * scale - 0.5
    coords = np.clip(coords, 0.0, src - 1.0)
    lo = np.floor(coords).astype(np.int64)
    hi = np.minimum(lo + 1, src - 1)
    frac = coords - lo
    return lo, hi, frac


def bilinear_upsample(grid, height: int, width: int) -> np.ndarray:
    """Resample a 2-D map to (height, width) with half-pixel-center alignment."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2 or grid.shape[0] < 1 or grid.shape[1] < 1:
        raise InvalidInputError(f"expected non-empty 2-D map, got shape {grid.shape}")
    r0, r1, fr = _axis_coords(grid.shape[0], height)
    c0, c1, fc = _axis_coords(grid.shape[1], width)
    top = grid[r0][:, c0] * (1.0 - fc) + grid[r0][:, c1] * fc
    bottom = grid[r1][:, c0] * (1.0 - fc) + grid[r1][:, c1] * fc
    return top * (1.0 - fr)[:, None] + bottom * fr[:, None]


def pearson(a, b) -> float:
    """Pearson correlation of two equal-shaped maps over flattened pixels.

    Zero-variance convention: two constant maps correlate at 1.0, a constant
    map against a varying one at 0.0. This keeps stability averages free of
    NaNs when a method emits a degenerate map.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError("correlation inputs must share a shape")
    x = a.ravel()
    y = b.ravel()
    const_x = x.max() == x.min()
    const_y = y.max() == y.min()
    if const_x and const_y:
        return 1.0
    if const_x or const_y:
        return 0.0
    if np.array_equal(x, y):
        return 1.0
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt(xc @ xc) * np.sqrt(yc @ yc)
    if denom == 0.0:
        return 0.0
    return float(np.clip((xc @ yc) / denom, -1.0, 1.0))
