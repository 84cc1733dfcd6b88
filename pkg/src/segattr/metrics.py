"""Evaluation suite: region score, deletion drops, leakage, insertion,
perturbation stability, and runtime measurement.

Every ratio shares the global ``EPS`` guard. Deletion drops are normalized
falls of the region score, so positive values mean occlusion hurt the model
and negative values mean it helped.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .ops import EPS, occlude, pearson, topk_select
from .perturbations import BATTERY, BLUR_SIGMA_COEFF, apply_perturbation

#: Reporting cap that keeps leakage aggregates finite when TDD is near zero.
LEAK_CAP = 1e6


@dataclass(frozen=True)
class MetricRow:
    """Per-(sample, method) metric values emitted by the harness."""

    tdd: float
    odd: float
    leak_abs: float
    insertion: float
    stability: float
    runtime_ms: float


def region_score(probs: np.ndarray, class_id: int, mask: np.ndarray) -> float:
    """Masked mean probability of one class: sum(M * p_c) / (sum(M) + eps)."""
    m = np.asarray(mask).astype(np.float64)
    return float((probs[class_id] * m).sum() / (m.sum() + EPS))


def deletion_drop(adapter, image, pixels, class_id, mask) -> float:
    """Normalized region-score fall after occluding an explicit pixel set."""
    before = region_score(adapter.predict(image), class_id, mask)
    after = region_score(adapter.predict(occlude(image, pixels)), class_id, mask)
    return (before - after) / (abs(before) + EPS)


def target_deletion_drop(adapter, image, heatmap, class_id, mask, k: float = 0.2) -> float:
    """Drop after deleting the top-k attributed pixels inside the target mask."""
    pixels = topk_select(heatmap, mask, k, region="inside")
    return deletion_drop(adapter, image, pixels, class_id, mask)


def offtarget_deletion_drop(adapter, image, heatmap, class_id, mask, k: float = 0.2) -> float:
    """Drop after deleting the top-k attributed pixels outside the target mask."""
    pixels = topk_select(heatmap, mask, k, region="outside")
    return deletion_drop(adapter, image, pixels, class_id, mask)


def leak_abs(tdd: float, odd: float, cap: float = LEAK_CAP) -> float:
    """Leakage-to-faithfulness ratio |ODD| / (|TDD| + eps), capped for reporting."""
    return float(min(abs(odd) / (abs(tdd) + EPS), cap))


def insertion_gain(adapter, image, heatmap, class_id, mask, k: float = 0.2) -> float:
    """Score gain from restoring top-k target pixels onto a mean-value baseline."""
    pixels = topk_select(heatmap, mask, k, region="inside")
    baseline = np.broadcast_to(
        image.mean(axis=(1, 2))[:, None, None], image.shape
    ).copy()
    restored = baseline.copy()
    restored[:, pixels[:, 0], pixels[:, 1]] = image[:, pixels[:, 0], pixels[:, 1]]
    gain = region_score(adapter.predict(restored), class_id, mask) - region_score(
        adapter.predict(baseline), class_id, mask
    )
    anchor = region_score(adapter.predict(image), class_id, mask)
    return gain / (abs(anchor) + EPS)


def stability(
    method,
    adapter,
    image,
    class_id,
    mask,
    strength: float = 0.03,
    seed: int = 0,
    base_heatmap: np.ndarray | None = None,
    blur_sigma_coeff: float = BLUR_SIGMA_COEFF,
) -> float:
    """Mean correlation between the clean heatmap and five perturbed ones.

    For the horizontal flip both the image and the mask are mirrored, and the
    resulting heatmap is mirrored back before correlation; otherwise a flip
    would measure spatial overlap instead of method stability. ``base_heatmap``
    may carry a precomputed method(image) result, since the method is
    deterministic and the harness has usually just produced it.
    """
    if strength < 0.0:
        raise ValueError("perturbation strength must be non-negative")
    base = method(adapter, image, class_id, mask) if base_heatmap is None else base_heatmap
    correlations = []
    for kind in BATTERY:
        if kind == "horizontal-flip":
            flipped = apply_perturbation(image, kind, strength)
            heatmap = method(adapter, flipped, class_id, np.asarray(mask)[:, ::-1])
            heatmap = heatmap[:, ::-1]
        else:
            perturbed = apply_perturbation(
                image, kind, strength, seed=seed, blur_sigma_coeff=blur_sigma_coeff
            )
            heatmap = method(adapter, perturbed, class_id, mask)
        correlations.append(pearson(base, heatmap))
    return float(np.mean(correlations))


def time_explanation(method, adapter, image, class_id, mask):
    """Run one explanation under a monotonic clock; returns (heatmap, milliseconds)."""
    start = time.perf_counter()
    heatmap = method(adapter, image, class_id, mask)
    elapsed_ms = (time.perf_counter() - start) * 1000.0
    return heatmap, elapsed_ms
