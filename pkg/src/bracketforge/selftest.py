"""Fast built-in invariant checks, run by ``bracketforge selftest``.

Each check is a few milliseconds to a second; the whole suite prints one
line per check and is byte-for-byte reproducible.
"""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np

from . import hdrio, merge, metrics, mevmtoy, nn, sdrsim, vmm
from .bracket import exposure_range, make_bracket
from .rng import Rng
from .synthetic import blob_scene


def check_crf():
    p = sdrsim.CrfParams(0.9, 0.6)
    x = np.linspace(0, 1, 1024)
    y = sdrsim.apply_crf(x[None, None, :, None].repeat(3, -1), p)[0, 0, :, 0]
    back = sdrsim.invert_crf(y[None, None, :, None].repeat(3, -1), p)[0, 0, :, 0]
    ok = y[-1] == 1.0 and np.all(np.diff(y) > 0) and np.abs(back - x).max() <= 1e-5
    return ok, f"max round-trip {np.abs(back - x).max():.2e}"


def check_noise():
    rng = Rng(7)
    x = np.full((2, 64, 64, 3), 0.25, dtype=np.float32)
    n = sdrsim.add_sensor_noise(x, sdrsim.NoiseParams(0.04, 0.01), rng) - x
    var = float(n.var())
    want = 0.04 ** 2 * 0.25 + 0.01 ** 2
    return abs(var / want - 1) < 0.1, f"variance ratio {var / want:.4f}"


def check_rng():
    r = Rng(123, 4)
    full = r.normal(5000, frame=2)
    part = r.normal(100, frame=2, offset=1001)
    return bool(np.array_equal(full[1001:1101], part)), "sub-range matches full draw"


def check_pfm():
    gen = Rng(1).generator()
    f = gen.uniform(0, 50, size=(5, 7, 3)).astype(np.float32)
    with tempfile.TemporaryDirectory() as d:
        hdrio.write_pfm(f, Path(d) / "a.pfm")
        g = hdrio.read_pfm(Path(d) / "a.pfm")
    return bool(np.array_equal(f, g)), "bit-exact round trip"


def check_merge():
    hdr = blob_scene(Rng(3).generator(), 24, 24)
    E0 = float(np.sqrt(np.prod(exposure_range(hdr[0]))))
    b = make_bracket(hdr, E0)
    H = merge.merge_classical(b).astype(np.float64)
    v = b.videos()
    ok_px = ((v > 0) & (v < 1)).any(axis=0)
    err = float(np.max(np.abs(H - hdr)[ok_px] / hdr[ok_px]))
    return err <= 1e-6, f"max relative error {err:.2e}"


def check_vmm():
    params = vmm.init_params(0)
    gen = Rng(5).generator()
    feats = vmm.build_features(gen.uniform(0, 1, (64, 3, 3)), np.exp2(gen.uniform(-4, 4, (64, 3))))
    w = vmm.vmm_forward(feats, params)
    swapped = vmm.vmm_forward(feats[:, [0, 2, 1]], params)
    ok = np.allclose(w.sum(-1), 1, atol=1e-6) and np.allclose(swapped, w[:, [0, 2, 1]], atol=1e-12)
    return ok, "weights sum to 1, slot swap permutes weights"


def check_vmm_grad():
    params = vmm.init_params(0)
    gen = Rng(6).generator()
    feats = vmm.build_features(gen.uniform(0.01, 1, (16, 3, 3)), np.exp2(gen.uniform(-4, 4, (16, 3))))
    R = feats[..., 3:6]
    ref = gen.uniform(0.1, 10, (16, 3))
    s = np.full((16, 1), 10.0)
    _, grads = vmm.loss_and_grads(params, feats, R, ref, s)
    rep = nn.gradcheck(lambda p: vmm.batch_loss(p, feats, R, ref, s), grads, params, gen, per_tensor=3)
    worst = max(nn.relative_error(a, n) for a, n in rep.values())
    return worst <= 1e-4, f"worst relative error {worst:.1e}"


def check_rope():
    cfg = mevmtoy.RopeConfig()
    gen = Rng(8).generator()
    q, k = gen.standard_normal((2, 24))
    p1, p2, d = np.array([1, 2, 0]), np.array([3, 0, 1]), np.array([0, 0, 5])

    def dot(a, b):
        return mevmtoy.apply_rotation(q, mevmtoy.rope_angles(a, cfg)) @ mevmtoy.apply_rotation(k, mevmtoy.rope_angles(b, cfg))

    err = abs(dot(p1, p2) - dot(p1 + d, p2 + d))
    return err <= 1e-5, f"relative-position error {err:.1e}"


def check_gate_zero():
    params = mevmtoy.init_params(0)
    seq = mevmtoy.make_sequence(Rng(9), frames=1, size=8)
    crf = seq[0][None]
    x = Rng(10).generator().standard_normal((1,) + seq[1].shape)
    a = mevmtoy.toy_dit_forward(x, crf, 0.5, params)
    b = mevmtoy.toy_dit_forward(x, crf, 0.5, params, exposure_aware=False)
    return bool(np.array_equal(a, b)), "zero gate equals plain RoPE"


def check_metrics():
    gen = Rng(11).generator()
    gt = gen.uniform(1, 1000, (1, 16, 16, 3))
    a, b, _ = metrics.affine_align(2 * gt + 3, gt)
    pu = metrics.pu21_encode(gt) + 0.01 * metrics.pu_peak()
    db = metrics.pu_psnr(metrics.pu21_decode(pu), gt)
    ok = abs(a - 0.5) < 1e-12 and abs(b + 1.5) < 1e-9 and abs(db - 40) < 0.01
    return ok, f"a={a:.6f} b={b:.6f} offset PSNR {db:.4f} dB"


CHECKS = [
    ("crf", check_crf), ("noise", check_noise), ("rng", check_rng), ("pfm", check_pfm),
    ("merge", check_merge), ("vmm-forward", check_vmm), ("vmm-gradient", check_vmm_grad),
    ("rope", check_rope), ("gate-zero", check_gate_zero), ("metrics", check_metrics),
]


def run(out=print) -> bool:
    all_ok = True
    for name, fn in CHECKS:
        ok, detail = fn()
        all_ok &= bool(ok)
        out(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return all_ok
