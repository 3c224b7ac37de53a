"""Frame/video containers and pixel semantics shared by every module.

A frame is an ``(H, W, 3)`` float32 array in interleaved RGB, row-major.  A
video stacks frames into ``(F, H, W, 3)``.  Plain arrays are accepted
everywhere; :class:`Video` adds a colour-space tag and validation for the
places where provenance matters (file I/O, the CLI, estimator outputs).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

REC709 = np.array([0.2126, 0.7152, 0.0722])


class DataError(ValueError):
    """Input data violates a documented precondition."""


class ColorSpace(enum.Enum):
    LinearRadiance = "linear_radiance"
    LinearDisplay = "linear_display"
    CrfEncoded = "crf_encoded"


@dataclass(frozen=True, eq=False)
class Video:
    data: np.ndarray
    color_space: ColorSpace = ColorSpace.LinearRadiance
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 3:
            arr = arr[None]
        if arr.ndim != 4 or arr.shape[-1] != 3:
            raise DataError(f"video must be (F, H, W, 3), got {arr.shape}")
        if arr.shape[0] < 1:
            raise DataError("video must have at least one frame")
        arr = np.array(arr, dtype=np.float32, copy=True)
        if not np.all(np.isfinite(arr)):
            raise DataError("video contains non-finite values")
        if self.color_space is ColorSpace.LinearRadiance:
            if arr.min() < 0:
                raise DataError("linear radiance must be non-negative")
        elif arr.min() < 0 or arr.max() > 1:
            raise DataError(f"{self.color_space.name} values must lie in [0, 1]")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def frame_count(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def frames(self) -> list[np.ndarray]:
        return list(self.data)

    def __len__(self):
        return self.frame_count

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, Video):
            return NotImplemented
        return self.color_space is other.color_space and np.array_equal(self.data, other.data)


def as_array(x, dtype=np.float64) -> np.ndarray:
    if isinstance(x, Video):
        x = x.data
    return np.asarray(x, dtype=dtype)


def luminance(frame) -> np.ndarray:
    """Rec. 709 luminance per pixel; drops the trailing channel axis."""
    arr = as_array(frame)
    if arr.ndim == 0 or arr.shape[-1] != 3:
        raise DataError(f"expected 3 channels in the last axis, got shape {arr.shape}")
    return arr @ REC709


def mean_luminance(frame) -> float:
    y = luminance(frame)
    if y.size == 0:
        raise DataError("mean luminance of an empty frame")
    return float(y.mean())
