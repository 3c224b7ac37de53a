"""Input validation in the spirit of ``sklearn.utils.check_array``."""

from __future__ import annotations

import numbers

import numpy as np

from .core import DataError, Video


def check_video(X, *, name="video", unit_range=False, nonneg=False, dtype=np.float64,
                allow_frame=True) -> np.ndarray:
    """Coerce to an ``(F, H, W, 3)`` array and check its values.

    A single ``(H, W, 3)`` frame is promoted to a one-frame video unless
    ``allow_frame`` is false.
    """
    if isinstance(X, Video):
        X = X.data
    arr = np.asarray(X, dtype=dtype)
    if arr.ndim == 3 and allow_frame:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise DataError(f"{name} must have shape (F, H, W, 3), got {arr.shape}")
    if 0 in arr.shape:
        raise DataError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains NaN or Inf")
    if unit_range and (arr.min() < 0 or arr.max() > 1):
        raise DataError(f"{name} values must lie in [0, 1]")
    if nonneg and arr.min() < 0:
        raise DataError(f"{name} must be non-negative")
    return arr


def check_frame(X, *, name="frame", dtype=np.float64) -> np.ndarray:
    arr = np.asarray(X.data if isinstance(X, Video) else X, dtype=dtype)
    if arr.ndim != 3 or arr.shape[-1] != 3:
        raise DataError(f"{name} must have shape (H, W, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains NaN or Inf")
    return arr


def check_positive(value, name) -> float:
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise DataError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)


def check_exposures(E, n_frames: int, name="exposure") -> np.ndarray:
    """Scalar or per-frame exposure list -> float64 array of length ``n_frames``."""
    arr = np.asarray(E, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.full(n_frames, float(arr))
    if arr.shape != (n_frames,):
        raise DataError(f"{name} must be a scalar or have {n_frames} entries, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise DataError(f"{name} values must be positive and finite")
    return arr
