"""Ground-truth exposure ladders cut from linear HDR video."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .core import DataError, luminance
from .rng import Rng
from .validation import check_exposures, check_frame, check_positive, check_video

BLACK_LEVEL = 1.0 / 510.0
WHITE_LEVEL = 1.0 - 1.0 / 510.0
E_LOW, E_HIGH = 2.0 ** -30, 2.0 ** 30

# Slot order used by the merging models: base, plus, minus.
SLOTS = ("base", "plus", "minus")


@dataclass(frozen=True, eq=False)
class ExposureBracket:
    """Three co-registered linear videos at -ev, 0 and +ev.

    ``exposures`` has shape ``(3, F)`` in :data:`SLOTS` order, so a video with
    per-frame exposures is representable.
    """

    base: np.ndarray
    plus: np.ndarray
    minus: np.ndarray
    exposures: np.ndarray
    ev: float = 4.0

    def __post_init__(self):
        shapes = {np.shape(v) for v in (self.base, self.plus, self.minus)}
        if len(shapes) != 1:
            raise DataError(f"bracket videos differ in shape: {sorted(shapes)}")
        shape = shapes.pop()
        if len(shape) != 4 or shape[-1] != 3:
            raise DataError(f"bracket videos must be (F, H, W, 3), got {shape}")
        E = np.asarray(self.exposures, dtype=np.float64)
        if E.ndim == 1:
            E = np.repeat(E[:, None], shape[0], axis=1)
        if E.shape != (3, shape[0]) or np.any(E <= 0) or not np.all(np.isfinite(E)):
            raise DataError(f"exposures must be positive with shape (3, {shape[0]})")
        object.__setattr__(self, "exposures", E)

    @property
    def frame_count(self) -> int:
        return self.base.shape[0]

    def videos(self) -> np.ndarray:
        """``(3, F, H, W, 3)`` stack in slot order."""
        return np.stack([self.base, self.plus, self.minus]).astype(np.float64)

    def frame(self, i: int) -> "ExposureBracket":
        sl = slice(i, i + 1)
        return ExposureBracket(self.base[sl], self.plus[sl], self.minus[sl], self.exposures[:, sl], self.ev)

    def map(self, fn) -> "ExposureBracket":
        """Apply ``fn`` to each of the three videos, keeping the exposures."""
        return ExposureBracket(fn(self.base), fn(self.plus), fn(self.minus), self.exposures, self.ev)


def ladder(E0, ev: float = 4.0) -> np.ndarray:
    """``(E0, E0 * 2^ev, E0 * 2^-ev)`` in slot order; exact for integer ev."""
    E0 = np.asarray(E0, dtype=np.float64)
    if float(ev).is_integer():
        up, down = np.ldexp(E0, int(ev)), np.ldexp(E0, -int(ev))
    else:
        up, down = E0 * 2.0 ** ev, E0 * 2.0 ** -ev
    return np.stack([E0, up, down])


def make_bracket(hdr, E0, ev: float = 4.0) -> ExposureBracket:
    """Clean linear bracket: ``clamp(hdr * E_k, 0, 1)`` with no noise or CRF."""
    x = check_video(hdr, name="hdr", nonneg=True)
    E = ladder(check_exposures(E0, x.shape[0], "E0"), ev)
    vids = [np.clip(x * E[k][:, None, None, None], 0.0, 1.0).astype(np.float32) for k in range(3)]
    return ExposureBracket(*vids, exposures=E, ev=ev)


def _clip_fractions(y: np.ndarray):
    """Closures giving the black/white clipped pixel fraction at exposure E."""
    n = y.size

    def black(E):
        return np.count_nonzero(E * y < BLACK_LEVEL) / n

    def white(E):
        return np.count_nonzero(E * y >= WHITE_LEVEL) / n

    return black, white


def _bisect_log(pred, rtol: float) -> float:
    """Smallest E in [E_LOW, E_HIGH] with pred(E) true; pred monotone in E."""
    lo, hi = math.log2(E_LOW), math.log2(E_HIGH)
    if pred(E_LOW):
        return E_LOW
    if not pred(E_HIGH):
        return E_HIGH
    tol = math.log2(1.0 + rtol)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if pred(2.0 ** mid):
            hi = mid
        else:
            lo = mid
    return 2.0 ** hi


def exposure_range(frame, black_fraction: float = 0.10, white_fraction: float = 0.30,
                   rtol: float = 1e-4) -> tuple[float, float]:
    """Exposures where 10% of pixels clip to black and 30% clip to white.

    A pixel is black-clipped when ``E * Y < 1/510`` (rounds to code 0) and
    white-clipped when ``E * Y >= 1 - 1/510`` (rounds to code 255), with Y the
    Rec. 709 luminance.  Both bounds are bisected in log2(E).
    """
    y = luminance(check_frame(frame)).ravel()
    if y.min() < 0:
        raise DataError("radiance must be non-negative")
    if not np.any(y > 0):
        raise DataError("exposure range of an all-zero frame")
    black, white = _clip_fractions(y)
    if np.count_nonzero(y == 0) / y.size >= black_fraction:
        warnings.warn("at least 10% of pixels are exactly zero; e_min set to the upper search bound",
                      stacklevel=2)
        e_min = E_HIGH
    else:
        e_min = _bisect_log(lambda E: black(E) <= black_fraction, rtol)
    e_max = _bisect_log(lambda E: white(E) >= white_fraction, rtol)
    return e_min, e_max


def sample_reference_exposure(bounds, rng: Rng, size: int | None = None, *, draw: int = 0):
    """Uniform in log2(E) between the bounds."""
    e_min, e_max = bounds
    check_positive(e_min, "e_min")
    check_positive(e_max, "e_max")
    count = 1 if size is None else int(size)
    if e_min >= e_max:
        if e_min > e_max:
            warnings.warn(f"empty exposure range ({e_min:g} > {e_max:g}); using e_min", stacklevel=2)
        out = np.full(count, float(e_min))
    else:
        u = rng.uniform(count, frame=0xB7AC, draw=draw)
        lo, hi = math.log2(e_min), math.log2(e_max)
        out = np.exp2(lo + (hi - lo) * u)
    return float(out[0]) if size is None else out


class ExposureBracketer(TransformerMixin, BaseEstimator):
    """Fit chooses the reference exposure; transform cuts the bracket.

    ``e0="auto"`` draws E0 from the first frame's clipping range.
    """

    def __init__(self, e0="auto", ev=4.0, seed=0):
        self.e0 = e0
        self.ev = ev
        self.seed = seed

    def fit(self, X, y=None):
        x = check_video(X, name="hdr", nonneg=True)
        if self.e0 == "auto":
            self.range_ = exposure_range(x[0])
            self.e0_ = sample_reference_exposure(self.range_, Rng(self.seed))
        else:
            self.range_ = None
            self.e0_ = check_positive(float(self.e0), "e0")
        return self

    def transform(self, X) -> ExposureBracket:
        check_is_fitted(self, "e0_")
        return make_bracket(X, self.e0_, self.ev)
