"""Degrade clean linear radiance into realistic 8-bit SDR video.

Stage order is fixed: scale by exposure, add sensor noise in the linear
domain, clip to [0, 1], apply the camera response, then clip and quantise to
8 bits.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .core import ColorSpace, DataError, Video, mean_luminance
from .rng import Rng
from .validation import check_exposures, check_positive, check_video

DISPLAY_GAMMA = 2.2
NOISE_STREAM = 0x4E01


@dataclass(frozen=True)
class CrfParams:
    n: float = 0.9
    sigma: float = 0.6

    def __post_init__(self):
        check_positive(self.n, "crf exponent n")
        check_positive(self.sigma, "crf knee sigma")

    def as_dict(self) -> dict:
        return {"n": float(self.n), "sigma": float(self.sigma)}


@dataclass(frozen=True)
class NoiseParams:
    sigma_s: float = 0.0
    sigma_r: float = 0.0
    rho: float = 0.5

    def __post_init__(self):
        if self.sigma_s < 0 or self.sigma_r < 0:
            raise DataError("noise standard deviations must be non-negative")
        if not 0 <= self.rho < 1:
            raise DataError("rho must lie in [0, 1)")

    @property
    def is_zero(self) -> bool:
        return self.sigma_s == 0 and self.sigma_r == 0


def _unit(video, name):
    x = check_video(video, name=name)
    if x.min() < 0 or x.max() > 1:
        raise DataError(f"{name} must lie in [0, 1]")
    return x


def apply_crf(video, p: CrfParams) -> np.ndarray:
    """``f(H) = (1 + sigma) H^n / (H^n + sigma)``; f(0) = 0 and f(1) = 1."""
    x = _unit(video, "crf input")
    hn = np.power(x, p.n)
    # numerator first so that H = 1 lands on exactly 1
    y = ((1.0 + p.sigma) * hn) / (hn + p.sigma)
    return y.astype(np.float32)


def invert_crf(video, p: CrfParams) -> np.ndarray:
    y = _unit(video, "crf-encoded input")
    if np.any(y >= 1.0 + p.sigma):
        raise DataError("encoded value outside the response range")
    x = np.power(p.sigma * y / (1.0 + p.sigma - y), 1.0 / p.n)
    return np.clip(x, 0.0, 1.0).astype(np.float32)


def gamma_encode(video, gamma: float = DISPLAY_GAMMA) -> np.ndarray:
    x = _unit(video, "gamma input")
    return np.power(x, 1.0 / gamma).astype(np.float32)


def gamma_decode(video, gamma: float = DISPLAY_GAMMA) -> np.ndarray:
    y = _unit(video, "gamma-encoded input")
    return np.power(y, gamma).astype(np.float32)


def sample_crf(rng: Rng, size: int | None = None):
    """n ~ N(0.9, 0.1), sigma ~ N(0.6, 0.1), redrawn until n >= 0.5 and sigma >= 0.2."""
    gen = rng.generator(tag=0xC8F)
    count = 1 if size is None else int(size)

    def truncated(mean, lower):
        out = gen.normal(mean, 0.1, count)
        bad = out < lower
        while bad.any():
            out[bad] = gen.normal(mean, 0.1, int(bad.sum()))
            bad = out < lower
        return out

    ns = truncated(0.9, 0.5)
    sigmas = truncated(0.6, 0.2)
    params = [CrfParams(float(a), float(b)) for a, b in zip(ns, sigmas)]
    return params[0] if size is None else params


def sample_noise(rng: Rng) -> NoiseParams:
    """Training-time noise levels: sigma_s ~ U(0, 0.05), sigma_r ~ U(0, 0.02)."""
    gen = rng.generator(tag=0x401)
    return NoiseParams(sigma_s=float(gen.uniform(0, 0.05)), sigma_r=float(gen.uniform(0, 0.02)))


def add_sensor_noise(video, p: NoiseParams, rng: Rng) -> np.ndarray:
    """Heteroscedastic noise ``sqrt(sigma_s^2 x + sigma_r^2) * eps`` with AR(1) eps.

    ``eps_0 = u_0`` and ``eps_i = rho eps_{i-1} + sqrt(1 - rho^2) u_i`` so eps
    has unit variance at every frame.  Output is not clipped.
    """
    x = check_video(video, name="noise input")
    if x.min() < 0:
        raise DataError("sensor noise input must be non-negative")
    if p.is_zero:
        return x.astype(np.float32)
    src = rng.child(rng.stream ^ NOISE_STREAM)
    n = x[0].size
    innov = np.sqrt(1.0 - p.rho * p.rho)
    out = np.empty(x.shape, dtype=np.float32)
    eps = None
    for i in range(x.shape[0]):
        u = src.normal(n, frame=i).reshape(x.shape[1:])
        eps = u if eps is None else p.rho * eps + innov * u
        std = np.sqrt(p.sigma_s ** 2 * x[i] + p.sigma_r ** 2)
        out[i] = x[i] + std * eps
    return out


def clip_quantize(video) -> np.ndarray:
    """``x -> round(255 clamp(x, 0, 1)) / 255`` with round-half-away-from-zero."""
    x = np.clip(np.asarray(video.data if isinstance(video, Video) else video, dtype=np.float64), 0.0, 1.0)
    return (np.floor(x * 255.0 + 0.5) / 255.0).astype(np.float32)


@dataclass(frozen=True, eq=False)
class SdrVideo:
    video: Video
    exposures: np.ndarray
    crf: CrfParams | None
    noise: NoiseParams
    seed: int | None
    gamma: float | None = None

    @property
    def data(self) -> np.ndarray:
        return self.video.data

    def linearize(self) -> np.ndarray:
        """Undo the response curve (quantisation stays)."""
        if self.crf is not None:
            return invert_crf(self.data, self.crf)
        if self.gamma is not None:
            return gamma_decode(self.data, self.gamma)
        return self.data.astype(np.float32)


def simulate_sdr_input(hdr, exposure, crf: CrfParams | None, noise: NoiseParams | None = None,
                       rng: Rng | None = None, *, gamma: float | None = None) -> SdrVideo:
    """Exposure -> noise -> clip -> response curve -> clip + 8-bit quantise.

    Pass ``crf=None, gamma=2.2`` for the display-gamma encoding used by the
    evaluation protocols.
    """
    x = check_video(hdr, name="hdr", nonneg=True)
    E = check_exposures(exposure, x.shape[0])
    noise = noise or NoiseParams()
    if rng is None:
        if not noise.is_zero:
            raise DataError("an Rng is required when noise is enabled")
        rng = Rng(0)
    if crf is None and gamma is None:
        raise DataError("pass either crf params or a display gamma")
    scaled = x * E[:, None, None, None]
    noisy = add_sensor_noise(scaled, noise, rng)
    lin = np.clip(noisy.astype(np.float64), 0.0, 1.0)
    enc = apply_crf(lin, crf) if crf is not None else gamma_encode(lin, gamma)
    sdr = clip_quantize(enc)
    video = Video(sdr, ColorSpace.CrfEncoded)
    return SdrVideo(video=video, exposures=E, crf=crf, noise=noise, seed=rng.seed,
                    gamma=None if crf is not None else gamma)


class ExposureMode(str, enum.Enum):
    Over = "over"
    Under = "under"
    Auto = "auto"


PROTOCOL_TARGETS = {ExposureMode.Over: 0.70, ExposureMode.Under: 0.01, ExposureMode.Auto: 0.25}


def protocol_exposures(hdr, mode) -> np.ndarray:
    """Per-frame exposures for the over / under / auto input protocols.

    Over and under fix one exposure from the first frame (mean luminance 0.70
    and 0.01).  Auto targets 0.25 on every frame, then smooths with a 3-tap
    box filter that replicates the end frames.
    """
    x = check_video(hdr, name="hdr", nonneg=True)
    mode = ExposureMode(mode)
    target = PROTOCOL_TARGETS[mode]
    if mode is not ExposureMode.Auto:
        m = mean_luminance(x[0])
        if m <= 0:
            raise DataError("first frame has zero mean luminance")
        return np.full(x.shape[0], target / m)
    means = np.array([mean_luminance(f) for f in x])
    if np.any(means <= 0):
        raise DataError(f"frames {np.flatnonzero(means <= 0).tolist()} have zero mean luminance")
    raw = target / means
    padded = np.concatenate([raw[:1], raw, raw[-1:]])
    return (padded[:-2] + padded[1:-1] + padded[2:]) / 3.0


class CrfEncoder(TransformerMixin, BaseEstimator):
    """Stateless transformer wrapping :func:`apply_crf` / :func:`invert_crf`."""

    def __init__(self, n=0.9, sigma=0.6):
        self.n = n
        self.sigma = sigma

    def fit(self, X=None, y=None):
        self.params_ = CrfParams(self.n, self.sigma)
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        return apply_crf(X, self.params_)

    def inverse_transform(self, X):
        check_is_fitted(self, "params_")
        return invert_crf(X, self.params_)


class SdrSimulator(TransformerMixin, BaseEstimator):
    """Fit picks exposures from a protocol; transform renders the SDR video.

    ``n``/``sigma`` select the parametric response; leave them ``None`` for
    display gamma 2.2.  ``sigma_s``/``sigma_r`` of zero disable noise.
    """

    def __init__(self, mode="over", n=None, sigma=None, sigma_s=0.0, sigma_r=0.0, rho=0.5,
                 seed=0, gamma=DISPLAY_GAMMA):
        self.mode = mode
        self.n = n
        self.sigma = sigma
        self.sigma_s = sigma_s
        self.sigma_r = sigma_r
        self.rho = rho
        self.seed = seed
        self.gamma = gamma

    def fit(self, X, y=None):
        self.exposures_ = protocol_exposures(X, self.mode)
        return self

    def transform(self, X) -> SdrVideo:
        check_is_fitted(self, "exposures_")
        crf = None if self.n is None else CrfParams(self.n, self.sigma)
        noise = NoiseParams(self.sigma_s, self.sigma_r, self.rho)
        return simulate_sdr_input(X, self.exposures_, crf, noise, Rng(self.seed),
                                  gamma=None if crf else self.gamma)
