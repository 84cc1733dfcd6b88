"""Model adapter contract and a seeded micro segmentation network.

The micro model is small enough to run thousands of desk-scale predictions
per second yet deep enough that its designated feature layer sits strictly
between input and logits. Forward and backward passes are written out
analytically so the feature-layer gradient can be verified against finite
differences to tight tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .ops import EPS, EmptyRegionError, InvalidInputError

FEATURE_CHANNELS = 8


@dataclass(frozen=True)
class FeatureBundle:
    """Feature-layer activations and the gradient of the region score wrt them."""

    activations: np.ndarray  # (C_f, h, w)
    gradient: np.ndarray  # (C_f, h, w)

    def __post_init__(self):
        if self.activations.shape != self.gradient.shape:
            raise InvalidInputError("activation/gradient shape mismatch")


@runtime_checkable
class ModelAdapter(Protocol):
    """What attribution methods need from a segmentation model.

    ``predict`` must be deterministic for fixed weights and input, and
    ``features_and_gradient`` must return the exact gradient of the masked
    mean class probability with respect to the designated feature layer.
    """

    num_classes: int

    def feature_shape(self, height: int, width: int) -> tuple[int, int, int]: ...

    def predict(self, image: np.ndarray) -> np.ndarray: ...

    def features_and_gradient(
        self, image: np.ndarray, class_id: int, mask: np.ndarray
    ) -> FeatureBundle: ...


def softmax_channels(logits: np.ndarray, axis: int = 0) -> np.ndarray:
    """Numerically stable softmax across the class axis."""
    shifted = logits - logits.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=axis, keepdims=True)


def masked_mean_probability(prob_plane: np.ndarray, mask: np.ndarray) -> float:
    """Mean probability over the mask pixels with the global epsilon guard."""
    m = mask.astype(np.float64)
    return float((prob_plane * m).sum() / (m.sum() + EPS))


def _conv3x3(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Stride-1 3x3 cross-correlation with 1-pixel reflect padding. x: (C, H, W)."""
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="reflect")
    windows = sliding_window_view(padded, (3, 3), axis=(1, 2))  # (C, H, W, 3, 3)
    out = np.tensordot(weight, windows, axes=([1, 2, 3], [0, 3, 4]))
    return out + bias[:, None, None]


class MicroModel:
    """Deterministic micro segmentation network with exact gradients.

    Architecture: conv3x3 (3->8, reflect pad) -> ReLU -> conv3x3 (8->8, the
    designated feature layer) -> ReLU -> conv1x1 (8->K) -> per-pixel softmax.
    All convolutions are stride 1, so features and logits stay at input
    resolution. Weights and biases are drawn from a seeded generator,
    uniform in [-0.5, 0.5] scaled by 1/sqrt(fan_in).
    """

    def __init__(self, seed: int = 0, num_classes: int = 4):
        if num_classes < 2:
            raise InvalidInputError("micro model needs at least 2 classes")
        self.seed = seed
        self.num_classes = num_classes
        rng = np.random.default_rng(seed)

        def draw(shape, fan_in):
            return rng.uniform(-0.5, 0.5, size=shape) / np.sqrt(fan_in)

        c = FEATURE_CHANNELS
        self.w1 = draw((c, 3, 3, 3), 3 * 9)
        self.b1 = draw((c,), 3 * 9)
        self.w2 = draw((c, c, 3, 3), c * 9)
        self.b2 = draw((c,), c * 9)
        self.w3 = draw((num_classes, c), c)
        self.b3 = draw((num_classes,), c)

    def feature_shape(self, height: int, width: int) -> tuple[int, int, int]:
        return (FEATURE_CHANNELS, height, width)

    def _check_input(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 3 or image.shape[0] != 3:
            raise InvalidInputError(f"expected (3, H, W) image, got {image.shape}")
        if image.shape[1] < 2 or image.shape[2] < 2:
            raise InvalidInputError("micro model needs at least 2x2 input (reflect pad)")
        return image

    def features(self, image: np.ndarray) -> np.ndarray:
        """Activations of the designated feature layer (pre-ReLU conv2 output)."""
        image = self._check_input(image)
        hidden = np.maximum(_conv3x3(image, self.w1, self.b1), 0.0)
        return _conv3x3(hidden, self.w2, self.b2)

    def _logits_from_features(self, features: np.ndarray) -> np.ndarray:
        rectified = np.maximum(features, 0.0)
        return np.tensordot(self.w3, rectified, axes=([1], [0])) + self.b3[:, None, None]

    def predict(self, image: np.ndarray) -> np.ndarray:
        """Per-pixel class probabilities, shape (K, H, W)."""
        return softmax_channels(self._logits_from_features(self.features(image)))

    def predict_batch(self, images: np.ndarray, chunk: int = 16) -> np.ndarray:
        """Vectorized predict over a (B, 3, H, W) stack; identical math per image."""
        images = np.asarray(images, dtype=np.float64)
        if images.ndim != 4 or images.shape[1] != 3:
            raise InvalidInputError(f"expected (B, 3, H, W) batch, got {images.shape}")
        out = []
        for start in range(0, images.shape[0], chunk):
            block = images[start : start + chunk]
            hidden = np.maximum(_conv3x3_batch(block, self.w1, self.b1), 0.0)
            feats = _conv3x3_batch(hidden, self.w2, self.b2)
            rect = np.maximum(feats, 0.0)
            logits = np.tensordot(rect, self.w3, axes=([1], [1]))  # (B, H, W, K)
            logits = np.moveaxis(logits, 3, 1) + self.b3[None, :, None, None]
            out.append(softmax_channels(logits, axis=1))
        return np.concatenate(out, axis=0)

    def _check_target(self, class_id: int, mask: np.ndarray) -> np.ndarray:
        if not 0 <= class_id < self.num_classes:
            raise InvalidInputError(f"class id {class_id} out of range")
        mask = np.asarray(mask).astype(bool)
        if not mask.any():
            raise EmptyRegionError("target mask is empty")
        return mask

    def features_and_gradient(
        self, image: np.ndarray, class_id: int, mask: np.ndarray
    ) -> FeatureBundle:
        """Exact backprop of the masked mean class probability to the feature layer."""
        mask = self._check_target(class_id, mask)
        features = self.features(image)
        rectified = np.maximum(features, 0.0)
        logits = np.tensordot(self.w3, rectified, axes=([1], [0])) + self.b3[:, None, None]
        probs = softmax_channels(logits)

        upstream = mask.astype(np.float64) / (mask.sum() + EPS)  # d score / d p_c
        # softmax VJP for a single-class upstream row
        pulled = upstream * probs[class_id]
        grad_logits = -probs * pulled[None]
        grad_logits[class_id] += pulled
        grad_rectified = np.tensordot(self.w3, grad_logits, axes=([0], [0]))
        gradient = grad_rectified * (features > 0.0)
        return FeatureBundle(activations=features, gradient=gradient)

    def head_region_score(self, features: np.ndarray, class_id: int, mask: np.ndarray) -> float:
        """Region score obtained by re-running only the post-feature head."""
        mask = self._check_target(class_id, mask)
        probs = softmax_channels(self._logits_from_features(features))
        return masked_mean_probability(probs[class_id], mask)

    def _head_scores_batch(
        self, features: np.ndarray, class_id: int, mask: np.ndarray
    ) -> np.ndarray:
        """Region scores for a (B, C_f, h, w) stack of feature tensors."""
        rect = np.maximum(features, 0.0)
        logits = np.tensordot(rect, self.w3, axes=([1], [1])) + self.b3  # (B, h, w, K)
        probs = softmax_channels(logits, axis=3)
        plane = probs[..., class_id]
        m = mask.astype(np.float64)
        return (plane * m).sum(axis=(1, 2)) / (m.sum() + EPS)


def fd_gradient_oracle(
    model: MicroModel,
    image: np.ndarray,
    class_id: int,
    mask: np.ndarray,
    step: float = 1e-3,
) -> np.ndarray:
    """Central finite differences of the region score wrt each feature activation.

    Perturbs one activation at a time and re-runs only the post-feature head,
    so the estimate is independent of the analytic backward pass it verifies.
    """
    if step <= 0.0:
        raise InvalidInputError("finite-difference step must be positive")
    mask = np.asarray(mask).astype(bool)
    features = model.features(image)
    flat = features.ravel()
    n = flat.size
    grad = np.empty(n, dtype=np.float64)
    chunk = max(1, min(1024, (4 * 2**20) // n))
    for start in range(0, n, chunk):
        ids = np.arange(start, min(start + chunk, n))
        plus = np.repeat(flat[None, :], ids.size, axis=0)
        minus = plus.copy()
        plus[np.arange(ids.size), ids] += step
        minus[np.arange(ids.size), ids] -= step
        s_plus = model._head_scores_batch(plus.reshape((-1,) + features.shape), class_id, mask)
        s_minus = model._head_scores_batch(minus.reshape((-1,) + features.shape), class_id, mask)
        grad[ids] = (s_plus - s_minus) / (2.0 * step)
    return grad.reshape(features.shape)
