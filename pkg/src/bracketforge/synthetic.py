"""Procedural HDR scenes with known radiance."""

from __future__ import annotations

import numpy as np


def _grid(h, w):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return yy / max(h - 1, 1), xx / max(w - 1, 1)


def blob_scene(gen: np.random.Generator, h: int, w: int, n_frames: int = 1,
               n_blobs: int = 6, max_speed: float = 0.0) -> np.ndarray:
    """Log-domain Gaussian blobs over a smooth gradient, optionally drifting.

    Radiance spans roughly 2^-6 .. 2^10 so any single 8-bit exposure clips
    somewhere.  Returns ``(F, H, W, 3)`` float32.
    """
    yy, xx = _grid(h, w)
    base = gen.uniform(-3.0, 1.0)
    slope = gen.uniform(-2.0, 2.0, size=2)
    centres = gen.uniform(0.0, 1.0, size=(n_blobs, 2))
    vel = gen.uniform(-max_speed, max_speed, size=(n_blobs, 2))
    radii = gen.uniform(0.05, 0.3, size=n_blobs)
    amps = gen.uniform(-4.0, 9.0, size=n_blobs)
    tints = gen.uniform(-0.4, 0.4, size=(n_blobs, 3))
    tex_f = gen.uniform(3.0, 9.0, size=2)
    tex_phase = gen.uniform(0, 2 * np.pi, size=2)
    frames = []
    for f in range(n_frames):
        logr = base + slope[0] * yy + slope[1] * xx
        logr = logr + 0.3 * np.sin(2 * np.pi * tex_f[0] * xx + tex_phase[0]) \
            * np.sin(2 * np.pi * tex_f[1] * yy + tex_phase[1])
        chroma = np.zeros((h, w, 3))
        for c, r, a, t, v in zip(centres, radii, amps, tints, vel):
            cy, cx = c + f * v
            g = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
            logr = logr + a * g
            chroma += g[..., None] * t
        rgb = np.exp2(logr[..., None] + chroma)
        frames.append(rgb)
    return np.stack(frames).astype(np.float32)
