"""The four attribution methods.

gpa  -- gradient-pooled: per-channel spatial-mean gradient weights.
ega  -- elementwise gradient-activation products.
ria  -- region intervention: grid-cell occlusion deltas of the region score.
dea  -- dual-evidence fusion of the ega and ria maps.

All methods return heatmaps normalized to [0, 1]. The gradient methods apply
a ReLU to the raw map (CAM convention); ria deliberately does not, so that
negative deltas survive into normalization.
"""

from __future__ import annotations

import numpy as np

from .metrics import region_score
from .ops import InvalidInputError, bilinear_upsample, minmax_normalize, occlude


def gpa(adapter, image, class_id, mask) -> np.ndarray:
    """Channel-pooled gradient weighting of the feature activations."""
    bundle = adapter.features_and_gradient(image, class_id, mask)
    weights = bundle.gradient.mean(axis=(1, 2))
    raw = np.maximum(np.tensordot(weights, bundle.activations, axes=1), 0.0)
    height, width = np.asarray(image).shape[1:]
    return minmax_normalize(bilinear_upsample(raw, height, width))


def ega(adapter, image, class_id, mask) -> np.ndarray:
    """Elementwise gradient-activation products at the feature layer."""
    bundle = adapter.features_and_gradient(image, class_id, mask)
    raw = np.maximum((bundle.gradient * bundle.activations).sum(axis=0), 0.0)
    height, width = np.asarray(image).shape[1:]
    return minmax_normalize(bilinear_upsample(raw, height, width))


def grid_cells(height: int, width: int, grid: int):
    """Row/col boundaries of a grid x grid partition; edge cells absorb remainders.

    Cell (i, j) spans rows [i*H//g, (i+1)*H//g) and the analogous columns.
    """
    if not 1 <= grid <= min(height, width):
        raise InvalidInputError(f"grid {grid} invalid for {height}x{width} image")
    rows = [(i * height) // grid for i in range(grid + 1)]
    cols = [(j * width) // grid for j in range(grid + 1)]
    return rows, cols


def _cell_pixels(r0: int, r1: int, c0: int, c1: int) -> np.ndarray:
    rr, cc = np.mgrid[r0:r1, c0:c1]
    return np.stack([rr.ravel(), cc.ravel()], axis=1)


def _predict_scores(adapter, images, class_id, mask) -> list[float]:
    batch = getattr(adapter, "predict_batch", None)
    if batch is None:
        return [region_score(adapter.predict(im), class_id, mask) for im in images]
    probs = batch(np.stack(images))
    return [region_score(p, class_id, mask) for p in probs]


def ria_cell_deltas(adapter, image, class_id, mask, grid: int) -> np.ndarray:
    """Pre-normalization intervention deltas, one per grid cell (g, g)."""
    image = np.asarray(image, dtype=np.float64)
    height, width = image.shape[1:]
    rows, cols = grid_cells(height, width, grid)
    base = region_score(adapter.predict(image), class_id, mask)
    occluded = [
        occlude(image, _cell_pixels(rows[i], rows[i + 1], cols[j], cols[j + 1]))
        for i in range(grid)
        for j in range(grid)
    ]
    scores = _predict_scores(adapter, occluded, class_id, mask)
    return base - np.asarray(scores).reshape(grid, grid)


def ria(adapter, image, class_id, mask, grid: int = 14) -> np.ndarray:
    """Occlusion delta of the region score for each cell of a fixed grid."""
    image = np.asarray(image, dtype=np.float64)
    height, width = image.shape[1:]
    rows, cols = grid_cells(height, width, grid)
    deltas = ria_cell_deltas(adapter, image, class_id, mask, grid)
    raw = np.empty((height, width), dtype=np.float64)
    for i in range(grid):
        for j in range(grid):
            raw[rows[i] : rows[i + 1], cols[j] : cols[j + 1]] = deltas[i, j]
    return minmax_normalize(raw)


def dea(
    adapter,
    image,
    class_id,
    mask,
    alpha: float = 0.65,
    beta: float = 0.35,
    grid: int = 14,
) -> np.ndarray:
    """Agreement-weighted fusion of gradient and intervention evidence.

    fused = alpha * A_g * (1 + beta * A_r) + (1 - alpha) * A_r, where A_g is
    the ega map and A_r the ria map; the fused map is renormalized because
    the multiplicative term can exceed 1.
    """
    if not 0.0 <= alpha <= 1.0:
        raise InvalidInputError(f"alpha must be in [0, 1], got {alpha}")
    if not (np.isfinite(beta) and beta >= 0.0):
        raise InvalidInputError(f"beta must be finite and non-negative, got {beta}")
    gradient_map = ega(adapter, image, class_id, mask)
    intervention_map = ria(adapter, image, class_id, mask, grid=grid)
    fused = alpha * gradient_map * (1.0 + beta * intervention_map)
    fused += (1.0 - alpha) * intervention_map
    return minmax_normalize(fused)


#: Stable lowercase identifiers used by the CLI and run configs.
METHOD_NAMES = ("gpa", "ega", "ria", "dea")
