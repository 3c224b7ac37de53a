"""HDR video quality: calibration, affine alignment, PU21, PU-PSNR, log-L1.

Also the Reinhard display tonemap and line-scan export used for figures.
"""

from __future__ import annotations

import csv
import io
import math

import numpy as np

from .core import DataError, luminance
from .validation import check_frame, check_video

GT_RANGE = (1.0, 1000.0)
GT_PERCENTILE = 99.9
ALIGN_PERCENTILES = (10.0, 90.0)
LOG_EPS = 1e-6

# PU21 "banding_glare" fit from the PU21 reference encoder (gfxdisp/pu21,
# pu21_encoder.m).  Domain 0.005 .. 10000 cd/m^2.
PU21_PARAMS = (0.353487901, 0.3734658629, 8.277049286e-05, 0.9062562627,
               0.09150303166, 0.9099517204, 596.3148142)
PU21_MIN, PU21_MAX = 0.005, 10000.0
DISPLAY_PEAK = 1000.0


def preprocess_gt(hdr, percentile: float = GT_PERCENTILE, target: float = GT_RANGE[1],
                  lo: float = GT_RANGE[0]) -> tuple[np.ndarray, float]:
    """Scale so the given luminance percentile maps to ``target``, then clamp.

    Returns ``(video, scale)``.
    """
    x = check_video(hdr, name="hdr", nonneg=True)
    p = float(np.percentile(luminance(x), percentile))
    if p <= 0:
        raise DataError("ground truth is all zero at the calibration percentile")
    scale = target / p
    return np.clip(x * scale, lo, target), scale


def affine_align(pred, gt, percentiles=ALIGN_PERCENTILES):
    """Least-squares ``a * pred + b ~ gt`` on mid-luminance pixels.

    Pixels whose ground-truth luminance lies between the two percentiles
    enter the fit with all channels; one ``(a, b)`` is shared by every
    channel.  Returns ``(a, b, aligned)`` with ``aligned`` clamped at 0.
    """
    p = check_video(pred, name="pred")
    g = check_video(gt, name="gt")
    if p.shape != g.shape:
        raise DataError(f"shape mismatch {p.shape} vs {g.shape}")
    L = luminance(g)
    lo, hi = np.percentile(L, percentiles)
    mask = (L >= lo) & (L <= hi)
    x = p[mask].ravel()
    y = g[mask].ravel()
    if x.size < 2:
        raise DataError("alignment mask selects fewer than two values")
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise DataError("prediction is constant over the alignment mask")
    a = float(dx @ (y - ym)) / sxx
    b = float(ym - a * xm)
    return a, b, np.maximum(a * p + b, 0.0)


def pu21_encode(Y) -> np.ndarray:
    """Absolute luminance in cd/m^2 -> PU21 units (per channel, clamped domain)."""
    p0, p1, p2, p3, p4, p5, p6 = PU21_PARAMS
    Y = np.clip(np.asarray(Y, dtype=np.float64), PU21_MIN, PU21_MAX)
    Yp = Y ** p3
    return p6 * (((p0 + p1 * Yp) / (1.0 + p2 * Yp)) ** p4 - p5)


def pu21_decode(V) -> np.ndarray:
    p0, p1, p2, p3, p4, p5, p6 = PU21_PARAMS
    Vp = np.maximum(np.asarray(V, dtype=np.float64) / p6 + p5, 0.0) ** (1.0 / p4)
    return (np.maximum(Vp - p0, 0.0) / (p1 - p2 * Vp)) ** (1.0 / p3)


def pu_peak(display_peak: float = DISPLAY_PEAK) -> float:
    return float(pu21_encode(display_peak) - pu21_encode(PU21_MIN))


def pu_psnr(pred, gt, display_peak: float = DISPLAY_PEAK) -> float:
    """PSNR of PU21-encoded values; ``inf`` when the encodings match exactly."""
    a = pu21_encode(pred)
    b = pu21_encode(gt)
    if a.shape != b.shape:
        raise DataError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 20.0 * math.log10(pu_peak(display_peak) / math.sqrt(mse))


def log_l1(pred, gt, s) -> float:
    """Mean ``|log(pred/s + 1e-6) - log(gt/s + 1e-6)|``."""
    s = np.asarray(s, dtype=np.float64)
    if np.any(s <= 0):
        raise DataError("normalising radiance s must be positive")
    H = np.asarray(pred, dtype=np.float64)
    R = np.asarray(gt, dtype=np.float64)
    if H.shape != R.shape:
        raise DataError(f"shape mismatch {H.shape} vs {R.shape}")
    if H.min() < 0 or R.min() < 0:
        raise DataError("radiance must be non-negative")
    return float(np.mean(np.abs(np.log(H / s + LOG_EPS) - np.log(R / s + LOG_EPS))))


def evaluate(pred, gt, percentile: float = GT_PERCENTILE) -> dict:
    """Calibrate gt, align pred to it, then score the whole video and each frame."""
    g, _ = preprocess_gt(gt, percentile)
    a, b, aligned = affine_align(pred, g)
    s = float(g.max())
    per_frame = [
        {"frame": i, "pu_psnr_db": pu_psnr(aligned[i], g[i]), "log_l1": log_l1(aligned[i], g[i], s)}
        for i in range(g.shape[0])
    ]
    return {"a": a, "b": b, "pu_psnr_db": pu_psnr(aligned, g), "log_l1": log_l1(aligned, g, s),
            "per_frame": per_frame}


def reinhard_tonemap(hdr, gamma: float = 2.2) -> np.ndarray:
    """Global Reinhard ``L / (1 + L)`` keeping colour ratios, then display gamma.

    Saturated colours can push one channel above 1 after the ratio is
    restored; those channels are clipped, so display luminance stays below 1.
    Output stays float64: rounding to float32 would turn values just under 1
    into exactly 1.
    """
    x = check_video(hdr, name="hdr", nonneg=True)
    L = luminance(x)[..., None]
    ratio = np.divide(1.0, 1.0 + L, out=np.zeros_like(L), where=L > 0)
    lin = np.clip(x * ratio, 0.0, 1.0)
    return lin ** (1.0 / gamma)


def scanline(frame, row: int) -> str:
    """CSV text ``column,R,G,B`` for one image row."""
    f = check_frame(frame)
    if not 0 <= row < f.shape[0]:
        raise DataError(f"row {row} outside 0..{f.shape[0] - 1}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["column", "R", "G", "B"])
    for col, (r, g, b) in enumerate(f[row]):
        w.writerow([col, f"{r:.9g}", f"{g:.9g}", f"{b:.9g}"])
    return buf.getvalue()
