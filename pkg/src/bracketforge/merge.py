"""Classical weighted-average merging of linear exposure brackets."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .bracket import ExposureBracket
from .core import DataError

W_MIN = 1.0 / 255.0


def estimate_radiance(v, E) -> np.ndarray:
    """Per-exposure radiance estimate ``v / E``."""
    E = np.asarray(E, dtype=np.float64)
    if np.any(E <= 0) or not np.all(np.isfinite(E)):
        raise DataError("exposure must be positive")
    return np.asarray(v, dtype=np.float64) / E


def hat_weight(v) -> np.ndarray:
    """Triangle weight peaking at 0.5, floored at 1/255."""
    v = np.asarray(v, dtype=np.float64)
    w = np.where(v <= 0.5, v, 1.0 - v)
    return np.maximum(w, W_MIN)


def merge_weights(values: np.ndarray) -> np.ndarray:
    """Normalised per-sample weights over the leading (exposure) axis.

    Saturated samples (v <= 0 or v >= 1) carry no radiance information and are
    dropped whenever the pixel has at least one unsaturated sample; otherwise
    all samples fall back to the floored hat weight.
    """
    w = hat_weight(values)
    saturated = (values <= 0.0) | (values >= 1.0)
    usable = ~saturated
    any_usable = usable.any(axis=0, keepdims=True)
    w = np.where(any_usable & saturated, 0.0, w)
    return w / w.sum(axis=0, keepdims=True)


def merge_frames(values, exposures) -> np.ndarray:
    """Merge a ``(K, ...)`` stack of linear values taken at ``K`` exposures.

    ``exposures`` broadcasts against ``values`` (shape ``(K, 1, ...)`` or
    ``(K,)`` for a single frame).
    """
    values = np.asarray(values, dtype=np.float64)
    E = np.asarray(exposures, dtype=np.float64)
    E = E.reshape(E.shape + (1,) * (values.ndim - E.ndim))
    w = merge_weights(values)
    return (w * estimate_radiance(values, E)).sum(axis=0)


def merge_classical(b: ExposureBracket) -> np.ndarray:
    """Weighted average of ``v_k / E_k`` over the three exposures."""
    stack = b.videos()
    E = b.exposures[:, :, None, None, None]
    return merge_frames(stack, E).astype(np.float32)


class ClassicalMerger(BaseEstimator):
    """Parameter-free merger exposed with the estimator interface."""

    def fit(self, X=None, y=None):
        return self

    def predict(self, X: ExposureBracket) -> np.ndarray:
        return merge_classical(X)
