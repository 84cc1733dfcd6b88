"""Five-element perturbation battery used by the stability metric."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from .ops import InvalidInputError

#: Canonical battery order; the stability metric iterates it verbatim.
BATTERY = (
    "additive-noise",
    "brightness",
    "contrast",
    "gaussian-blur",
    "horizontal-flip",
)

#: One scalar strength drives heterogeneous perturbations, so blur needs a
#: strength-to-sigma coefficient: strength 0.03 maps to sigma ~= 1 pixel.
BLUR_SIGMA_COEFF = 33.33


def apply_perturbation(
    image: np.ndarray,
    kind: str,
    strength: float = 0.03,
    seed: int = 0,
    blur_sigma_coeff: float = BLUR_SIGMA_COEFF,
) -> np.ndarray:
    """Apply one named perturbation and clamp the result back to [0, 1].

    Zero strength is an exact identity for every kind except the flip, which
    ignores strength entirely. Noise is reproducible per (seed, shape).
    """
    image = np.asarray(image, dtype=np.float64)
    if kind == "additive-noise":
        if strength == 0.0:
            return image.copy()
        rng = np.random.default_rng(seed)
        out = image + rng.normal(0.0, strength, size=image.shape)
    elif kind == "brightness":
        out = image + strength
    elif kind == "contrast":
        if strength == 0.0:
            return image.copy()
        mean = image.mean(axis=(1, 2), keepdims=True)
        out = mean + (1.0 + strength) * (image - mean)
    elif kind == "gaussian-blur":
        sigma = strength * blur_sigma_coeff
        if sigma == 0.0:
            return image.copy()
        # reflect boundary keeps each pixel's outgoing kernel mass at exactly 1,
        # so the per-channel mean is preserved
        out = gaussian_filter(image, sigma=(0.0, sigma, sigma), mode="reflect")
    elif kind == "horizontal-flip":
        return np.ascontiguousarray(image[:, :, ::-1])
    else:
        raise InvalidInputError(f"unknown perturbation kind {kind!r}")
    return np.clip(out, 0.0, 1.0)
