"""A tiny multi-exposure video flow-matching transformer.

The CRF-encoded input and three linear exposures (base, minus, plus) are
concatenated along time.  Every token is rotated with axial RoPE over
(frame, row, column); each block adds a gated, learned angle offset that
encodes the frame's exposure value ``e``, whether it is the CRF input
``c`` and its position inside its segment ``r``.  The gate starts at zero,
so an untrained offset leaves the plain RoPE model unchanged.

Latents are an identity space: 2x2 average-pooled frames mapped to
``2x - 1`` plus a constant channel of ones.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import nn, runtime
from .bracket import exposure_range, make_bracket, sample_reference_exposure
from .core import DataError
from .paramfile import load_params, save_params
from .rng import Rng
from .sdrsim import sample_crf, simulate_sdr_input
from .synthetic import blob_scene

log = logging.getLogger(__name__)

MAGIC = b"MEVT"
D_MODEL, HEADS, D_MLP, BLOCKS = 48, 2, 192, 2
LATENT_CH, PATCH = 4, 2
PAYLOAD = PATCH * PATCH * LATENT_CH
D_GAMMA = 16
T_SCALE = 1000.0
EV_STEP = 4
# (e, c) per segment in concatenation order: CRF input, base, minus, plus
SEGMENTS = (("crf", 0, 1), ("base", 0, 0), ("minus", -EV_STEP, 0), ("plus", EV_STEP, 0))


@dataclass(frozen=True)
class RopeConfig:
    """Axial RoPE layout: a third of the angles each for frame, row, column.

    ``form="linear"`` is the usual angle-proportional-to-position rotation.
    ``form="exponent"`` puts the position in the exponent, ``base^(-t*a/d)``,
    kept only for comparison (it is not a relative encoding).
    """

    head_dim: int = 24
    base: float = 10000.0
    form: str = "linear"

    def __post_init__(self):
        if self.head_dim <= 0 or self.head_dim % 12:
            raise ValueError(f"head_dim must be a positive multiple of 12, got {self.head_dim}")
        if self.form not in ("linear", "exponent"):
            raise ValueError(f"unknown RoPE form {self.form!r}")

    @property
    def third(self) -> int:
        return self.head_dim // 6


def rope_angles(p, cfg: RopeConfig = RopeConfig()) -> np.ndarray:
    """Angles ``(..., head_dim/2)`` for positions ``(..., 3)`` = (frame, row, col)."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] != 3:
        raise ValueError(f"positions need 3 coordinates, got shape {p.shape}")
    if np.any(p < 0):
        raise ValueError("positions must be non-negative")
    t = np.arange(cfg.third, dtype=np.float64)
    if cfg.form == "linear":
        ang = p[..., None] * cfg.base ** (-t / cfg.third)
    else:
        ang = cfg.base ** (-t * p[..., None] / cfg.third)
    return ang.reshape(p.shape[:-1] + (3 * cfg.third,))


def sinusoidal(x, dim: int, base: float = 10000.0) -> np.ndarray:
    """Interleaved ``[sin, cos]`` features of a scalar array."""
    x = np.asarray(x, dtype=np.float64)
    freqs = base ** (-np.arange(0, dim, 2, dtype=np.float64) / dim)
    arg = x[..., None] * freqs
    out = np.empty(x.shape + (dim,))
    out[..., 0::2] = np.sin(arg)
    out[..., 1::2] = np.cos(arg)
    return out


def index_embedding(idx) -> np.ndarray:
    """``concat[gamma(e), gamma(c), gamma(r)]`` for an ``(..., 3)`` index table."""
    idx = np.asarray(idx, dtype=np.float64)
    return np.concatenate([sinusoidal(idx[..., k], D_GAMMA) for k in range(3)], axis=-1)


def exposure_offset(idx, params: dict, prefix: str = "") -> np.ndarray:
    """Gated offset ``alpha * Linear(index_embedding(idx))``."""
    lin = index_embedding(idx) @ params[prefix + "w"] + params[prefix + "b"]
    return params[prefix + "alpha"] * lin


def apply_rotation(x, theta) -> np.ndarray:
    """Rotate interleaved channel pairs of ``x`` by ``theta`` (norm preserving)."""
    x = np.asarray(x, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if x.shape[-1] % 2 or x.shape[-1] != 2 * theta.shape[-1]:
        raise ValueError(f"cannot rotate {x.shape[-1]} channels with {theta.shape[-1]} angles")
    return nn.rotate_pairs(x, theta)


def concat_layout(crf, base, minus, plus):
    """Stack the four segments along time; return ``(frames, index_table)``.

    Every segment is ``(F, H, W, C)``.  The table holds ``(e, c, r)`` per
    concatenated frame.
    """
    segs = [np.asarray(s) for s in (crf, base, minus, plus)]
    if len({s.shape for s in segs}) != 1:
        raise DataError(f"segments differ in shape: {[s.shape for s in segs]}")
    return np.concatenate(segs, axis=0), layout_table(segs[0].shape[0])


def layout_table(frames: int) -> np.ndarray:
    """``(4F, 3)`` table of ``(e, c, r)`` in concatenation order."""
    return np.array([(e, c, r) for _, e, c in SEGMENTS for r in range(frames)], dtype=np.int64)


# ------------------------------------------------------------------ latents

def to_latent(video) -> np.ndarray:
    """``(F, H, W, 3)`` values in [0, 1] -> ``(F, H/2, W/2, 4)`` toy latent."""
    v = np.asarray(video, dtype=np.float64)
    F, H, W, _ = v.shape
    if H % 2 or W % 2:
        raise DataError("frame size must be even")
    pooled = v.reshape(F, H // 2, 2, W // 2, 2, 3).mean(axis=(2, 4))
    ones = np.ones(pooled.shape[:-1] + (1,))
    return np.concatenate([2.0 * pooled - 1.0, ones], axis=-1)


def from_latent(z) -> np.ndarray:
    """Back to [0, 1] RGB at latent resolution (the constant channel is dropped)."""
    return np.clip((np.asarray(z)[..., :3] + 1.0) / 2.0, 0.0, 1.0)


def patchify(x) -> np.ndarray:
    """``(B, N, H, W, C)`` -> ``(B, N*(H/2)*(W/2), 4C)`` tokens, frame-major."""
    B, N, H, W, C = x.shape
    x = x.reshape(B, N, H // PATCH, PATCH, W // PATCH, PATCH, C).transpose(0, 1, 2, 4, 3, 5, 6)
    return x.reshape(B, N * (H // PATCH) * (W // PATCH), PATCH * PATCH * C)


def unpatchify(tok, N, H, W) -> np.ndarray:
    B = tok.shape[0]
    C = tok.shape[-1] // (PATCH * PATCH)
    x = tok.reshape(B, N, H // PATCH, W // PATCH, PATCH, PATCH, C).transpose(0, 1, 2, 4, 3, 5, 6)
    return x.reshape(B, N, H, W, C)


def token_positions(n_frames: int, h: int, w: int) -> np.ndarray:
    """``(T, 3)`` absolute (frame, row, col) of every patch token."""
    f, i, j = np.meshgrid(np.arange(n_frames), np.arange(h // PATCH), np.arange(w // PATCH), indexing="ij")
    return np.stack([f, i, j], axis=-1).reshape(-1, 3)


# ------------------------------------------------------------------- params

def param_shapes(cfg: RopeConfig = RopeConfig()) -> dict:
    if D_MODEL // HEADS != cfg.head_dim:
        raise ValueError(f"head_dim {cfg.head_dim} does not match model width {D_MODEL}/{HEADS}")
    half = cfg.head_dim // 2
    shapes = {
        "embed.w": (PAYLOAD, D_MODEL), "embed.b": (D_MODEL,),
        "temb.w1": (D_MODEL, D_MODEL), "temb.b1": (D_MODEL,),
        "temb.w2": (D_MODEL, D_MODEL), "temb.b2": (D_MODEL,),
    }
    for i in range(BLOCKS):
        b = f"b{i}."
        shapes.update({b + "ln1.g": (D_MODEL,), b + "ln1.b": (D_MODEL,)})
        shapes.update(nn.mha_shapes(b + "attn.", D_MODEL))
        shapes.update({b + "rope.w": (3 * D_GAMMA, half), b + "rope.b": (half,), b + "rope.alpha": (half,)})
        shapes.update({b + "ln2.g": (D_MODEL,), b + "ln2.b": (D_MODEL,),
                       b + "mlp.w1": (D_MODEL, D_MLP), b + "mlp.b1": (D_MLP,),
                       b + "mlp.w2": (D_MLP, D_MODEL), b + "mlp.b2": (D_MODEL,)})
    shapes.update({"out.w": (D_MODEL, PAYLOAD), "out.b": (PAYLOAD,)})
    return shapes


def init_params(seed: int = 0, cfg: RopeConfig = RopeConfig()) -> dict:
    shapes = param_shapes(cfg)
    gen = Rng(seed).generator(tag=0x3E7)
    ones = [k for k in shapes if k.endswith(("ln1.g", "ln2.g"))]
    zero = [k for k in shapes if k.endswith("rope.alpha")]
    return nn.init_params(shapes, gen, zero=zero, ones=ones)


def gate_names(params: dict) -> list[str]:
    return [k for k in params if k.endswith("rope.alpha")]


# ------------------------------------------------------------------ forward

def _timestep_fwd(t, p):
    s = sinusoidal(T_SCALE * np.asarray(t, dtype=np.float64), D_MODEL)
    u, _ = nn.linear_fwd(s, p["temb.w1"], p["temb.b1"])
    g, cg = nn.gelu_fwd(u)
    e, _ = nn.linear_fwd(g, p["temb.w2"], p["temb.b2"])
    return e, (s, g, cg)


def _timestep_bwd(de, cache, p, grads):
    s, g, cg = cache
    dg, grads["temb.w2"], grads["temb.b2"] = nn.linear_bwd(de, g, p["temb.w2"])
    du = nn.gelu_bwd(dg, cg)
    _, grads["temb.w1"], grads["temb.b1"] = nn.linear_bwd(du, s, p["temb.w1"])


def toy_dit_forward(noisy, crf, t, params: dict, cfg: RopeConfig = RopeConfig(),
                    *, exposure_aware: bool = True, return_cache: bool = False):
    """Velocity for the three generated segments.

    ``noisy``: ``(B, 3F, H, W, 4)`` interpolants of (base, minus, plus);
    ``crf``: ``(B, F, H, W, 4)`` clean conditioning latents; ``t``: ``(B,)``.
    With ``exposure_aware=False`` the offset branch is skipped entirely,
    giving the plain axial-RoPE model with the same weights.
    """
    noisy = np.asarray(noisy, dtype=np.float64)
    crf = np.asarray(crf, dtype=np.float64)
    if noisy.ndim != 5 or crf.ndim != 5:
        raise DataError("expected (B, frames, H, W, C) latents")
    B, G, H, W, C = noisy.shape
    F = crf.shape[1]
    if crf.shape != (B, F, H, W, C) or G != 3 * F or C != LATENT_CH:
        raise DataError(f"shape mismatch: noisy {noisy.shape}, crf {crf.shape}")
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (B,))
    if np.any((t < 0) | (t > 1)):
        raise DataError("timestep must lie in [0, 1]")

    x = np.concatenate([crf, noisy], axis=1)
    table = layout_table(F)
    pos = token_positions(4 * F, H, W)
    per_frame = (H // PATCH) * (W // PATCH)
    frame_of = pos[:, 0]
    theta0 = rope_angles(pos, cfg)
    gam = index_embedding(table)

    tok = patchify(x)
    h, _ = nn.linear_fwd(tok, params["embed.w"], params["embed.b"])
    temb, tcache = _timestep_fwd(t, params)
    h = h + temb[:, None, :]
    caches = []
    for i in range(BLOCKS):
        b = f"b{i}."
        if exposure_aware:
            lin = gam @ params[b + "rope.w"] + params[b + "rope.b"]
            theta = theta0 + (params[b + "rope.alpha"] * lin)[frame_of]
        else:
            lin, theta = None, theta0
        a_in, c1 = nn.layernorm_fwd(h, params[b + "ln1.g"], params[b + "ln1.b"])
        a, ca = nn.mha_fwd(a_in, params, b + "attn.", HEADS, theta=theta[None])
        h = h + a
        m_in, c2 = nn.layernorm_fwd(h, params[b + "ln2.g"], params[b + "ln2.b"])
        u, _ = nn.linear_fwd(m_in, params[b + "mlp.w1"], params[b + "mlp.b1"])
        g, cg = nn.gelu_fwd(u)
        m, _ = nn.linear_fwd(g, params[b + "mlp.w2"], params[b + "mlp.b2"])
        h = h + m
        caches.append((c1, ca, c2, m_in, g, cg, lin))
    hg = h[:, F * per_frame:]
    out, _ = nn.linear_fwd(hg, params["out.w"], params["out.b"])
    v = unpatchify(out, G, H, W)
    if not return_cache:
        return v
    return v, (tok, tcache, caches, hg, gam, F, H, W, per_frame, exposure_aware)


def toy_dit_backward(dv, cache, params: dict) -> dict:
    tok, tcache, caches, hg, gam, F, H, W, per_frame, exposure_aware = cache
    grads = nn.zeros_like_params(params)
    dout = patchify(dv)
    dhg, grads["out.w"], grads["out.b"] = nn.linear_bwd(dout, hg, params["out.w"])
    B = dv.shape[0]
    dh = np.zeros((B, 4 * F * per_frame, D_MODEL))
    dh[:, F * per_frame:] = dhg
    for i in reversed(range(BLOCKS)):
        b = f"b{i}."
        c1, ca, c2, m_in, g, cg, lin = caches[i]
        dg, grads[b + "mlp.w2"], grads[b + "mlp.b2"] = nn.linear_bwd(dh, g, params[b + "mlp.w2"])
        du = nn.gelu_bwd(dg, cg)
        dm_in, grads[b + "mlp.w1"], grads[b + "mlp.b1"] = nn.linear_bwd(du, m_in, params[b + "mlp.w1"])
        dx, grads[b + "ln2.g"], grads[b + "ln2.b"] = nn.layernorm_bwd(dm_in, c2)
        dh = dh + dx
        da_in, dtheta = nn.mha_bwd(dh, ca, params, grads)
        dx, grads[b + "ln1.g"], grads[b + "ln1.b"] = nn.layernorm_bwd(da_in, c1)
        dh = dh + dx
        if exposure_aware:
            dframe = dtheta.sum(axis=0).reshape(4 * F, per_frame, -1).sum(axis=1)
            grads[b + "rope.alpha"] = (dframe * lin).sum(axis=0)
            dlin = dframe * params[b + "rope.alpha"]
            grads[b + "rope.w"] = gam.T @ dlin
            grads[b + "rope.b"] = dlin.sum(axis=0)
    _timestep_bwd(dh.sum(axis=1), tcache, params, grads)
    _, grads["embed.w"], grads["embed.b"] = nn.linear_bwd(dh, tok, params["embed.w"])
    return grads


# ------------------------------------------------------------ flow matching

def flow_interpolant(V, eps, t):
    """``t * V + (1 - t) * eps``; ``t`` broadcasts from the leading axis."""
    V = np.asarray(V, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if V.shape != eps.shape:
        raise DataError(f"shape mismatch {V.shape} vs {eps.shape}")
    t = np.asarray(t, dtype=np.float64)
    t = t.reshape(t.shape + (1,) * (V.ndim - t.ndim))
    return t * V + (1.0 - t) * eps


def fm_loss(v_hat, V, eps) -> float:
    """Mean ``|v_hat - (V - eps)|`` over generated elements."""
    v_hat, V, eps = (np.asarray(a, dtype=np.float64) for a in (v_hat, V, eps))
    if not v_hat.shape == V.shape == eps.shape:
        raise DataError("fm_loss inputs differ in shape")
    return float(np.mean(np.abs(v_hat - (V - eps))))


def _fm_loss_grad(v_hat, V, eps):
    diff = v_hat - (V - eps)
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def loss_and_grads(params, crf, target, eps, t, cfg=RopeConfig(), exposure_aware=True):
    x_t = flow_interpolant(target, eps, t)
    v, cache = toy_dit_forward(x_t, crf, t, params, cfg, exposure_aware=exposure_aware, return_cache=True)
    loss, dv = _fm_loss_grad(v, target, eps)
    return loss, toy_dit_backward(dv, cache, params)


def batch_loss(params, crf, target, eps, t, cfg=RopeConfig(), exposure_aware=True) -> float:
    v = toy_dit_forward(flow_interpolant(target, eps, t), crf, t, params, cfg, exposure_aware=exposure_aware)
    return fm_loss(v, target, eps)


# ------------------------------------------------------------------ dataset

def make_sequence(rng: Rng, frames: int = 2, size: int = 16, max_speed: float = 0.05):
    """One synthetic example: ``(crf_latent (F,h,w,4), target (3F,h,w,4))``.

    The target stacks base, minus and plus linear exposures in
    concatenation order.
    """
    hdr = blob_scene(rng.generator(), size, size, n_frames=frames, max_speed=max_speed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        E0 = sample_reference_exposure(exposure_range(hdr[0]), rng)
    b = make_bracket(hdr, E0)
    crf = sample_crf(rng)
    sdr = simulate_sdr_input(hdr, E0, crf).data
    target = np.concatenate([to_latent(b.base), to_latent(b.minus), to_latent(b.plus)])
    return to_latent(sdr), target


def synthetic_dataset(n: int, seed: int, frames: int = 2, size: int = 16):
    return [make_sequence(Rng(seed, i), frames, size) for i in range(n)]


def _stack(dataset, idx):
    crf = np.stack([dataset[i][0] for i in idx])
    target = np.stack([dataset[i][1] for i in idx])
    return crf, target


# ----------------------------------------------------------------- training

@dataclass
class ToyConfig:
    steps: int = 3000
    batch: int = 8
    lr: float = 1e-3
    seed: int = 0
    learn_gate: bool = True
    form: str = "linear"
    log_every: int = 500

    @property
    def rope(self) -> RopeConfig:
        return RopeConfig(form=self.form)


def toy_train(dataset, config: ToyConfig, params: dict | None = None, history: list | None = None) -> dict:
    """Adam on exact gradients; ``t ~ U(0, 1)`` and fresh noise per sample."""
    if len(dataset) == 0:
        raise DataError("empty training set")
    cfg = config.rope
    params = init_params(config.seed, cfg) if params is None else {k: v.copy() for k, v in params.items()}
    frozen = () if config.learn_gate else gate_names(params)
    opt = nn.Adam(lr=config.lr, frozen=frozen)
    gen = Rng(config.seed, 0x70F).generator()
    with runtime.reductions():
        for step in range(config.steps):
            idx = gen.integers(0, len(dataset), size=config.batch)
            crf, target = _stack(dataset, idx)
            t = gen.uniform(0.0, 1.0, size=config.batch)
            eps = gen.standard_normal(target.shape)
            loss, grads = loss_and_grads(params, crf, target, eps, t, cfg)
            if not np.isfinite(loss):
                raise FloatingPointError(f"toy loss became {loss} at step {step}")
            if history is not None:
                history.append(loss)
            if config.log_every and step % config.log_every == 0:
                log.info("toy step %d loss %.5f", step, loss)
            opt.step(params, grads)
    return params


def evaluation_loss(params, dataset, seed: int = 0, draws: int = 4, cfg: RopeConfig = RopeConfig()) -> float:
    """Flow-matching loss over the whole dataset at fixed ``(t, noise)`` draws.

    Using the same draws for every model makes losses directly comparable.
    """
    gen = Rng(seed, 0xE7A1).generator()
    crf, target = _stack(dataset, range(len(dataset)))
    total = 0.0
    for _ in range(draws):
        t = gen.uniform(0.0, 1.0, size=len(dataset))
        eps = gen.standard_normal(target.shape)
        total += batch_loss(params, crf, target, eps, t, cfg)
    return total / draws


def toy_sample(crf_latent, params: dict, steps: int = 8, rng: Rng | None = None,
               cfg: RopeConfig = RopeConfig()) -> np.ndarray:
    """Euler integration of the learned velocity from Gaussian noise.

    Returns ``(3F, h, w, 4)`` latents: base, minus, plus.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    crf = np.asarray(crf_latent, dtype=np.float64)[None]
    F, h, w, c = crf.shape[1:]
    rng = rng or Rng(0)
    x = rng.normal(3 * F * h * w * c, draw=0x5A).reshape(1, 3 * F, h, w, c)
    with runtime.reductions():
        for k in range(steps):
            x = x + toy_dit_forward(x, crf, k / steps, params, cfg) / steps
    return x[0]


def save_toy(path, params: dict, cfg: RopeConfig = RopeConfig(), meta: dict | None = None) -> None:
    info = {"form": cfg.form, "head_dim": cfg.head_dim, **(meta or {})}
    save_params(path, MAGIC, {k: params[k] for k in param_shapes(cfg)}, info)


def load_toy(path) -> tuple[dict, RopeConfig]:
    params, meta = load_params(path, MAGIC)
    cfg = RopeConfig(head_dim=int(meta.get("head_dim", 24)), form=meta.get("form", "linear"))
    for name, shape in param_shapes(cfg).items():
        if name not in params or params[name].shape != shape:
            raise DataError(f"{path}: bad or missing tensor {name!r}")
    return params, cfg


class ToyMEVM(BaseEstimator):
    """``fit(dataset)`` on (crf latent, target) pairs, ``predict(crf latent)`` samples."""

    def __init__(self, steps=3000, batch=8, lr=1e-3, seed=0, learn_gate=True, form="linear", sample_steps=8):
        self.steps = steps
        self.batch = batch
        self.lr = lr
        self.seed = seed
        self.learn_gate = learn_gate
        self.form = form
        self.sample_steps = sample_steps

    def _config(self):
        return ToyConfig(steps=self.steps, batch=self.batch, lr=self.lr, seed=self.seed,
                         learn_gate=self.learn_gate, form=self.form)

    def fit(self, X, y=None):
        self.loss_curve_ = []
        self.params_ = toy_train(list(X), self._config(), history=self.loss_curve_)
        return self

    def predict(self, X, seed: int = 0) -> np.ndarray:
        check_is_fitted(self, "params_")
        return toy_sample(X, self.params_, self.sample_steps, Rng(seed), self._config().rope)
