"""Minimal numpy layers with hand-written backward passes.

Each ``*_fwd`` returns ``(out, cache)``; the matching ``*_bwd`` takes the
upstream gradient and the cache.  Weight matrices are stored ``(in, out)``.
Everything runs in float64 so finite-difference checks are meaningful.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

LN_EPS = 1e-5
_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


# ------------------------------------------------------------------ linear

def linear_fwd(x, W, b):
    return x @ W + b, x


def linear_bwd(dy, x, W):
    d_in, d_out = W.shape
    x2 = x.reshape(-1, d_in)
    dy2 = dy.reshape(-1, d_out)
    return dy @ W.T, x2.T @ dy2, dy2.sum(axis=0)


# -------------------------------------------------------------------- GELU

def gelu_fwd(x):
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    return x * cdf, (x, cdf)


def gelu_bwd(dy, cache):
    x, cdf = cache
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return dy * (cdf + x * pdf)


# --------------------------------------------------------------- layernorm

def layernorm_fwd(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xh = xc * rstd
    return xh * g + b, (xh, rstd, g)


def layernorm_bwd(dy, cache):
    xh, rstd, g = cache
    d = xh.shape[-1]
    dg = (dy * xh).reshape(-1, d).sum(axis=0)
    db = dy.reshape(-1, d).sum(axis=0)
    dxh = dy * g
    dx = rstd * (dxh - dxh.mean(axis=-1, keepdims=True) - xh * (dxh * xh).mean(axis=-1, keepdims=True))
    return dx, dg, db


# ----------------------------------------------------------------- softmax

def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_bwd(dy, p, axis=-1):
    return p * (dy - (dy * p).sum(axis=axis, keepdims=True))


# ---------------------------------------------------------------- rotation

def rotate_pairs(x, theta):
    """Rotate interleaved pairs ``(x[2k], x[2k+1])`` by ``theta[k]``.

    The pair is the complex number ``x[2k] + i x[2k+1]`` multiplied by
    ``exp(i theta[k])``; both real and imaginary parts are kept.
    """
    if x.shape[-1] != 2 * theta.shape[-1]:
        raise ValueError(f"rotation needs {2 * theta.shape[-1]} channels, got {x.shape[-1]}")
    c, s = np.cos(theta), np.sin(theta)
    x0, x1 = x[..., 0::2], x[..., 1::2]
    half = np.broadcast_shapes(x0.shape, theta.shape)
    out = np.empty(half[:-1] + (2 * half[-1],), dtype=np.result_type(x, theta))
    out[..., 0::2] = x0 * c - x1 * s
    out[..., 1::2] = x0 * s + x1 * c
    return out


def rotate_pairs_bwd(dy, y, theta):
    """Gradients w.r.t. the unrotated input and the angle (before any reduction)."""
    dx = rotate_pairs(dy, -theta)
    dtheta = dy[..., 1::2] * y[..., 0::2] - dy[..., 0::2] * y[..., 1::2]
    return dx, dtheta


# --------------------------------------------------------------- attention

def mha_fwd(x, p, prefix, heads, theta=None):
    """Multi-head self-attention over axis -2 of ``x`` (shape ``(B, T, D)``).

    ``theta`` (broadcastable to ``(B, T, D/heads/2)``) rotates queries and keys
    per token; it is shared by all heads.
    """
    B, T, D = x.shape
    dh = D // heads
    q, _ = linear_fwd(x, p[prefix + "wq"], p[prefix + "bq"])
    k, _ = linear_fwd(x, p[prefix + "wk"], p[prefix + "bk"])
    v, _ = linear_fwd(x, p[prefix + "wv"], p[prefix + "bv"])
    q = q.reshape(B, T, heads, dh).transpose(0, 2, 1, 3)
    k = k.reshape(B, T, heads, dh).transpose(0, 2, 1, 3)
    v = v.reshape(B, T, heads, dh).transpose(0, 2, 1, 3)
    if theta is not None:
        th = theta[:, None] if theta.ndim == 3 else theta
        q = rotate_pairs(q, th)
        k = rotate_pairs(k, th)
    scale = 1.0 / math.sqrt(dh)
    att = softmax((q @ k.transpose(0, 1, 3, 2)) * scale, axis=-1)
    o = (att @ v).transpose(0, 2, 1, 3).reshape(B, T, D)
    y, _ = linear_fwd(o, p[prefix + "wo"], p[prefix + "bo"])
    return y, (x, q, k, v, att, o, theta, heads, prefix)


def mha_bwd(dy, cache, p, grads):
    """Accumulates weight gradients into ``grads``; returns ``(dx, dtheta)``."""
    x, q, k, v, att, o, theta, heads, prefix = cache
    B, T, D = x.shape
    dh = D // heads
    do, dWo, dbo = linear_bwd(dy, o, p[prefix + "wo"])
    grads[prefix + "wo"] += dWo
    grads[prefix + "bo"] += dbo
    do = do.reshape(B, T, heads, dh).transpose(0, 2, 1, 3)
    datt = do @ v.transpose(0, 1, 3, 2)
    dv = att.transpose(0, 1, 3, 2) @ do
    ds = softmax_bwd(datt, att) / math.sqrt(dh)
    dq = ds @ k
    dk = ds.transpose(0, 1, 3, 2) @ q
    dtheta = None
    if theta is not None:
        th = theta[:, None] if theta.ndim == 3 else theta
        dq, dtq = rotate_pairs_bwd(dq, q, th)
        dk, dtk = rotate_pairs_bwd(dk, k, th)
        dtheta = (dtq + dtk).sum(axis=1)  # sum over heads
    dx = np.zeros_like(x)
    for name, d in (("q", dq), ("k", dk), ("v", dv)):
        d = d.transpose(0, 2, 1, 3).reshape(B, T, D)
        dxi, dW, db = linear_bwd(d, x, p[prefix + "w" + name])
        grads[prefix + "w" + name] += dW
        grads[prefix + "b" + name] += db
        dx += dxi
    return dx, dtheta


def mha_shapes(prefix, d):
    shapes = {}
    for name in "qkvo":
        shapes[prefix + "w" + name] = (d, d)
        shapes[prefix + "b" + name] = (d,)
    return shapes


# ------------------------------------------------------------------- init

def init_params(shapes: dict, rng: np.random.Generator, zero=(), ones=()) -> dict:
    """Uniform fan-in init for matrices, zeros for biases, ones for gains."""
    params = {}
    for name, shape in shapes.items():
        if name in ones:
            params[name] = np.ones(shape)
        elif name in zero or len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            bound = 1.0 / math.sqrt(shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def zeros_like_params(params: dict) -> dict:
    return {k: np.zeros_like(v) for k, v in params.items()}


# ------------------------------------------------------------------ optim

class Adam:
    def __init__(self, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, frozen=()):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.frozen = set(frozen)
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, g in grads.items():
            if name in self.frozen:
                continue
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            params[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# -------------------------------------------------------------- gradcheck

def finite_difference(loss_fn, params: dict, name: str, index, h: float = 1e-3) -> float:
    """Central difference of ``loss_fn(params)`` w.r.t. one scalar entry."""
    arr = params[name]
    old = arr[index]
    arr[index] = old + h
    up = loss_fn(params)
    arr[index] = old - h
    down = loss_fn(params)
    arr[index] = old
    return (up - down) / (2.0 * h)


def gradcheck(loss_fn, grads: dict, params: dict, rng: np.random.Generator,
              per_tensor: int = 8, h: float = 1e-3) -> dict:
    """Compare analytic gradients with central differences on sampled entries.

    Returns ``{name: (analytic, numeric)}`` arrays per tensor.
    """
    report = {}
    for name in sorted(params):
        arr = params[name]
        flat = rng.choice(arr.size, size=min(per_tensor, arr.size), replace=False)
        idx = [np.unravel_index(i, arr.shape) for i in flat]
        ana = np.array([grads[name][i] for i in idx])
        num = np.array([finite_difference(loss_fn, params, name, i, h) for i in idx])
        report[name] = (ana, num)
    return report


def relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    """``|a - n| / max(|a|, |n|, floor)`` over a whole tensor.

    Some gradients are exactly zero by symmetry (a bias added to every
    softmax logit, a key bias); ``floor`` keeps round-off noise there from
    being read as a large relative error.
    """
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / denom)
