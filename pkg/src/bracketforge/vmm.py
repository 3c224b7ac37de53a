"""Learned per-pixel merging of exposure brackets.

Each pixel's three exposures become a length-3 sequence of 7-D features
``[V (3), R = V / E (3), E (1)]``.  A two-layer MLP embeds each feature,
one pre-norm self-attention block mixes information across the exposures
(never across pixels), and a LayerNorm + linear head gives one logit per
exposure.  The softmax of the logits blends the radiance estimates.

Gradients are derived by hand and checked against finite differences.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import nn, runtime
from .bracket import ExposureBracket, exposure_range, make_bracket, sample_reference_exposure
from .core import DataError
from .metrics import LOG_EPS as LOSS_EPS, log_l1
from .paramfile import load_params, save_params
from .rng import Rng
from .synthetic import blob_scene

log = logging.getLogger(__name__)

MAGIC = b"VMM1"
D_IN, D_HIDDEN, D_MODEL, HEADS = 7, 128, 64, 4

SHAPES = {
    "mlp.w1": (D_IN, D_HIDDEN), "mlp.b1": (D_HIDDEN,),
    "mlp.w2": (D_HIDDEN, D_MODEL), "mlp.b2": (D_MODEL,),
    "attn.ln.g": (D_MODEL,), "attn.ln.b": (D_MODEL,),
    **nn.mha_shapes("attn.", D_MODEL),
    "head.ln.g": (D_MODEL,), "head.ln.b": (D_MODEL,),
    "head.w": (D_MODEL, 1), "head.b": (1,),
}


def init_params(seed: int = 0, zero_head: bool = False) -> dict:
    gen = Rng(seed).generator(tag=0x7A1)
    zero = ("head.w",) if zero_head else ()
    return nn.init_params(SHAPES, gen, zero=zero, ones=("attn.ln.g", "head.ln.g"))


def check_params(params: dict) -> dict:
    for name, shape in SHAPES.items():
        if name not in params:
            raise DataError(f"VMM parameters missing {name!r}")
        if params[name].shape != shape:
            raise DataError(f"VMM parameter {name!r} has shape {params[name].shape}, expected {shape}")
        if not np.all(np.isfinite(params[name])):
            raise DataError(f"VMM parameter {name!r} is not finite")
    return params


# ---------------------------------------------------------------- features

def build_features(values, exposures) -> np.ndarray:
    """``(N, 3, 3)`` linear values and ``(N, 3)`` exposures -> ``(N, 3, 7)``."""
    values = np.asarray(values, dtype=np.float64)
    E = np.asarray(exposures, dtype=np.float64)
    if np.any(E <= 0):
        raise DataError("exposures must be positive")
    R = values / E[..., None]
    feats = np.concatenate([values, R, E[..., None]], axis=-1)
    if not np.all(np.isfinite(feats)):
        raise DataError("non-finite VMM features")
    return feats


def condition(feats: np.ndarray) -> np.ndarray:
    """Fixed input scaling: radiance and exposure enter as log2 / 8.

    Radiance spans many decades; feeding it raw would leave the first layer
    dominated by the brightest pixels.  No parameters, so no gradient.
    """
    out = feats.copy()
    out[..., 3:6] = np.log2(feats[..., 3:6] + 2.0 ** -20) / 8.0
    out[..., 6] = np.log2(feats[..., 6]) / 8.0
    return out


# ----------------------------------------------------------------- network

def forward(feats: np.ndarray, params: dict):
    """Blend weights ``(N, 3)`` and a cache for :func:`backward`."""
    x = condition(feats)
    h1, _ = nn.linear_fwd(x, params["mlp.w1"], params["mlp.b1"])
    g, cg = nn.gelu_fwd(h1)
    z, _ = nn.linear_fwd(g, params["mlp.w2"], params["mlp.b2"])
    a_in, cl1 = nn.layernorm_fwd(z, params["attn.ln.g"], params["attn.ln.b"])
    a, ca = nn.mha_fwd(a_in, params, "attn.", HEADS)
    z2 = z + a
    hn, cl2 = nn.layernorm_fwd(z2, params["head.ln.g"], params["head.ln.b"])
    logits, _ = nn.linear_fwd(hn, params["head.w"], params["head.b"])
    w = nn.softmax(logits[..., 0], axis=-1)
    return w, (x, g, cg, cl1, ca, hn, cl2, w)


def backward(dw: np.ndarray, cache, params: dict) -> dict:
    x, g, cg, cl1, ca, hn, cl2, w = cache
    grads = nn.zeros_like_params(params)
    dlogits = nn.softmax_bwd(dw, w, axis=-1)[..., None]
    dhn, grads["head.w"], grads["head.b"] = nn.linear_bwd(dlogits, hn, params["head.w"])
    dz2, grads["head.ln.g"], grads["head.ln.b"] = nn.layernorm_bwd(dhn, cl2)
    da_in, _ = nn.mha_bwd(dz2, ca, params, grads)
    dz_ln, grads["attn.ln.g"], grads["attn.ln.b"] = nn.layernorm_bwd(da_in, cl1)
    dz = dz2 + dz_ln
    dg, grads["mlp.w2"], grads["mlp.b2"] = nn.linear_bwd(dz, g, params["mlp.w2"])
    dh1 = nn.gelu_bwd(dg, cg)
    _, grads["mlp.w1"], grads["mlp.b1"] = nn.linear_bwd(dh1, x, params["mlp.w1"])
    return grads


def blend(weights: np.ndarray, radiance: np.ndarray) -> np.ndarray:
    """``H = sum_k W_k R_k``; weights ``(N, 3)``, radiance ``(N, 3, 3)``."""
    return np.einsum("nk,nkc->nc", weights, radiance)


def vmm_forward(feats, params) -> np.ndarray:
    return forward(np.asarray(feats, dtype=np.float64), params)[0]


# -------------------------------------------------------------------- loss

def vmm_loss(H, H_ref, s) -> float:
    """Mean ``|log(H/s + eps) - log(H_ref/s + eps)|`` with eps = 1e-6."""
    return log_l1(H, H_ref, s)


def _loss_and_grad_H(H, H_ref, s):
    a = H / s + LOSS_EPS
    diff = np.log(a) - np.log(H_ref / s + LOSS_EPS)
    loss = float(np.mean(np.abs(diff)))
    dH = np.sign(diff) / (a * s) / diff.size
    return loss, dH


def loss_and_grads(params, feats, radiance, H_ref, s):
    """Loss of a pixel batch and its exact gradient w.r.t. every parameter."""
    w, cache = forward(feats, params)
    H = blend(w, radiance)
    loss, dH = _loss_and_grad_H(H, H_ref, s)
    dw = np.einsum("nc,nkc->nk", dH, radiance)
    return loss, backward(dw, cache, params)


def batch_loss(params, feats, radiance, H_ref, s) -> float:
    w, _ = forward(feats, params)
    return vmm_loss(blend(w, radiance), H_ref, s)


# ----------------------------------------------------------------- merging

def bracket_pixels(b: ExposureBracket):
    """Flatten a bracket to ``(features, radiance)`` over all pixels."""
    vids = b.videos()  # (3, F, H, W, 3)
    F, H, W = vids.shape[1:4]
    values = vids.transpose(1, 2, 3, 0, 4).reshape(-1, 3, 3)
    E = np.repeat(b.exposures.T, H * W, axis=0)  # (F*H*W, 3)
    feats = build_features(values, E)
    return feats, feats[..., 3:6], (F, H, W)


def vmm_merge(b: ExposureBracket, params: dict, chunk: int = 1 << 15) -> np.ndarray:
    """HDR video as a per-pixel convex combination of ``V_k / E_k``."""
    feats, R, (F, H, W) = bracket_pixels(b)
    spans = [(i, min(i + chunk, len(feats))) for i in range(0, len(feats), chunk)]

    def work(span):
        a, z = span
        return blend(forward(feats[a:z], params)[0], R[a:z])

    with runtime.reductions():
        parts = runtime.pmap(work, spans)
    return np.concatenate(parts).reshape(F, H, W, 3).astype(np.float32)


# -------------------------------------------------------------- distortion

def distort(video: np.ndarray, rng: Rng, *, gain: float = 0.05, noise: float = 0.005) -> np.ndarray:
    """Stand-in for latent encode/decode error on one linear exposure video.

    A smooth sinusoidal gain field (+-5%), a 3x3 box blur and additive
    Gaussian noise, then clipped back to [0, 1].
    """
    x = np.asarray(video, dtype=np.float64)
    F, H, W, _ = x.shape
    gen = rng.generator(tag=0xD157)
    yy, xx = np.mgrid[0:H, 0:W] / np.array([max(H, 1), max(W, 1)])[:, None, None]
    fy, fx = gen.uniform(0.3, 1.5, size=2)
    phase = gen.uniform(0, 2 * np.pi)
    field = 1.0 + gain * np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)
    x = x * field[None, :, :, None]
    p = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)), mode="edge")
    x = sum(p[:, dy:dy + H, dx:dx + W] for dy in range(3) for dx in range(3)) / 9.0
    eps = np.stack([rng.normal(H * W * 3, frame=f, draw=0xD157) for f in range(F)]).reshape(x.shape)
    return np.clip(x + noise * eps, 0.0, 1.0).astype(np.float32)


def distort_bracket(b: ExposureBracket, rng: Rng) -> ExposureBracket:
    vids = [distort(v, rng.child(rng.stream * 3 + k + 1)) for k, v in enumerate((b.base, b.plus, b.minus))]
    return ExposureBracket(*vids, exposures=b.exposures, ev=b.ev)


def training_pair(hdr, rng: Rng):
    """Distorted bracket at a random in-range reference exposure, plus its target."""
    hdr = np.asarray(hdr, dtype=np.float32)
    if hdr.ndim == 3:
        hdr = hdr[None]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # scenes too contrasty for the clip targets
        E0 = sample_reference_exposure(exposure_range(hdr[0]), rng)
    return distort_bracket(make_bracket(hdr, E0), rng), hdr


def synthetic_dataset(n: int, seed: int, size: int = 32):
    """``n`` single-frame (distorted bracket, clean HDR) pairs."""
    return [training_pair(blob_scene(Rng(seed, i).generator(), size, size), Rng(seed, i)) for i in range(n)]


def dataset_from_frames(frames, seed: int):
    """Training pairs from user-supplied HDR frames, one pair per frame."""
    return [training_pair(f, Rng(seed, i)) for i, f in enumerate(frames)]


# ---------------------------------------------------------------- training

@dataclass
class TrainConfig:
    lr: float = 1e-3
    steps: int = 2000
    batch: int = 2048
    seed: int = 0
    log_every: int = 200


def vmm_train(dataset, config: TrainConfig, params: dict | None = None, history: list | None = None) -> dict:
    """Adam on exact gradients over random pixel batches.

    ``dataset`` is a sequence of ``(distorted bracket, ground-truth HDR)``.
    Each pixel's loss is normalised by its own video's maximum radiance.
    """
    if len(dataset) == 0:
        raise DataError("empty training set")
    params = init_params(config.seed) if params is None else {k: v.copy() for k, v in params.items()}
    feats, rads, refs, scales = [], [], [], []
    for b, hdr in dataset:
        f, r, _ = bracket_pixels(b)
        h = np.asarray(hdr, dtype=np.float64).reshape(-1, 3)
        if len(h) != len(f):
            raise DataError("bracket and ground truth differ in size")
        feats.append(f)
        rads.append(r)
        refs.append(h)
        scales.append(np.full((len(h), 1), max(float(h.max()), 1e-12)))
    feats, rads = np.concatenate(feats), np.concatenate(rads)
    refs, scales = np.concatenate(refs), np.concatenate(scales)
    gen = Rng(config.seed, 0x7EA1).generator()
    opt = nn.Adam(lr=config.lr)
    with runtime.reductions():
        for step in range(config.steps):
            idx = gen.integers(0, len(feats), size=min(config.batch, len(feats)))
            loss, grads = loss_and_grads(params, feats[idx], rads[idx], refs[idx], scales[idx])
            if not np.isfinite(loss):
                raise FloatingPointError(f"VMM loss became {loss} at step {step}")
            if history is not None:
                history.append(loss)
            if config.log_every and step % config.log_every == 0:
                log.info("vmm step %d loss %.5f", step, loss)
            opt.step(params, grads)
    return params


def save_vmm(path, params: dict, meta: dict | None = None) -> None:
    save_params(path, MAGIC, {k: params[k] for k in SHAPES}, meta)


def load_vmm(path) -> dict:
    params, _ = load_params(path, MAGIC)
    return check_params(params)


class VideoMergingModel(BaseEstimator):
    """Estimator wrapper: ``fit(brackets, hdrs)`` then ``predict(bracket)``."""

    def __init__(self, lr=1e-3, steps=2000, batch=2048, seed=0):
        self.lr = lr
        self.steps = steps
        self.batch = batch
        self.seed = seed

    def fit(self, X, y):
        X, y = list(X), list(y)
        if len(X) != len(y):
            raise DataError("need one ground-truth video per bracket")
        self.loss_curve_ = []
        cfg = TrainConfig(lr=self.lr, steps=self.steps, batch=self.batch, seed=self.seed)
        self.params_ = vmm_train(list(zip(X, y)), cfg, history=self.loss_curve_)
        return self

    def predict(self, X: ExposureBracket) -> np.ndarray:
        check_is_fitted(self, "params_")
        return vmm_merge(X, self.params_)

    def score(self, X, y) -> float:
        """Negative mean log-L1 (higher is better)."""
        check_is_fitted(self, "params_")
        losses = [vmm_loss(self.predict(b), h, max(float(np.max(h)), 1e-12)) for b, h in zip(X, y)]
        return -float(np.mean(losses))
