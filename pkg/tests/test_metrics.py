import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bracketforge import metrics as m
from bracketforge.core import DataError

# Encoder constants typed independently of the package, evaluated at 30 digits.
_P = [mp.mpf(s) for s in
      "0.353487901 0.3734658629 8.277049286e-05 0.9062562627 0.09150303166 0.9099517204 596.3148142".split()]


def pu_oracle(y):
    with mp.workdps(30):
        yp = mp.mpf(y) ** _P[3]
        return float(_P[6] * (((_P[0] + _P[1] * yp) / (1 + _P[2] * yp)) ** _P[4] - _P[5]))


def test_pu21_frozen_points():
    np.testing.assert_allclose(m.pu21_encode([1, 100, 1000, 10000]),
                               [36.543911139419205, 256.38389731270396, 420.09692134924434, 595.39392002009497],
                               rtol=1e-12)
    assert m.pu_peak() == pytest.approx(420.09692134869726, rel=1e-12)
    assert abs(m.pu21_encode(0.005)) < 1e-6


def test_pu21_matches_oracle_on_grid():
    Y = np.geomspace(0.005, 10000, 4096)
    got = m.pu21_encode(Y)
    want = np.array([pu_oracle(y) for y in Y])
    assert np.abs(got - want).max() <= 1e-4
    assert np.all(np.diff(got) > 0)


def test_pu21_decode_round_trip():
    Y = np.geomspace(0.005, 10000, 500)
    np.testing.assert_allclose(m.pu21_decode(m.pu21_encode(Y)), Y, rtol=1e-9)


def test_pu_psnr_examples():
    gt = np.random.default_rng(0).uniform(1, 1000, (2, 8, 8, 3))
    assert m.pu_psnr(gt, gt) == math.inf
    off = m.pu21_decode(m.pu21_encode(gt) + 0.01 * m.pu_peak())
    assert m.pu_psnr(off, gt) == pytest.approx(40.0, abs=0.01)


def test_pu_psnr_against_direct_formula():
    g = np.random.default_rng(1)
    a, b = g.uniform(0.01, 2000, (2, 3, 5, 5, 3))
    mse = np.mean([(pu_oracle(x) - pu_oracle(y)) ** 2 for x, y in zip(a.ravel(), b.ravel())])
    want = 20 * math.log10(pu_oracle(1000) - pu_oracle(0.005)) - 10 * math.log10(mse)
    assert m.pu_psnr(a, b) == pytest.approx(want, abs=0.01)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_pu_psnr_permutation_invariant(seed):
    g = np.random.default_rng(seed)
    a, b = g.uniform(0.01, 1000, (2, 1, 4, 4, 3))
    perm = g.permutation(16)
    pa = a.reshape(16, 3)[perm].reshape(a.shape)
    pb = b.reshape(16, 3)[perm].reshape(b.shape)
    assert m.pu_psnr(pa, pb) == pytest.approx(m.pu_psnr(a, b), rel=1e-12)


def test_preprocess_examples():
    x = np.full((1, 10, 10, 3), 2.0)
    v, scale = m.preprocess_gt(x)
    assert scale == 500 and np.all(v == 1000)
    v, scale = m.preprocess_gt(np.full((1, 4, 4, 3), 500.0))
    assert scale == 2 and np.all(v == 1000)
    low = x.copy()
    low[0, 0, 0] = 1e-4
    v, _ = m.preprocess_gt(low)
    assert v.min() == 1.0
    with pytest.raises(DataError):
        m.preprocess_gt(np.zeros((1, 2, 2, 3)))


def test_affine_align_exact():
    gt = np.random.default_rng(2).uniform(1, 1000, (2, 16, 16, 3))
    a, b, aligned = m.affine_align((gt - 3) / 2, gt)
    assert a == pytest.approx(2, abs=1e-12) and b == pytest.approx(3, abs=1e-9)
    np.testing.assert_allclose(aligned, gt, rtol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 100), st.floats(-50, 50), st.integers(0, 10_000))
def test_affine_align_recovers_any_relation(a, b, seed):
    gt = np.random.default_rng(seed).uniform(1, 1000, (1, 8, 8, 3))
    fa, fb, _ = m.affine_align((gt - b) / a, gt)
    assert fa == pytest.approx(a, rel=1e-9) and fb == pytest.approx(b, abs=1e-7 * (1 + abs(b)) * 1000)


def test_affine_align_noisy():
    g = np.random.default_rng(3)
    gt = g.uniform(1, 1000, (1, 100, 334, 3))
    pred = (gt - 10) / 1.5 + g.normal(0, 0.5, gt.shape)
    a, b, _ = m.affine_align(pred, gt)
    assert a == pytest.approx(1.5, rel=0.01) and b == pytest.approx(10, rel=0.05)


def test_affine_align_errors():
    gt = np.random.default_rng(4).uniform(1, 10, (1, 4, 4, 3))
    with pytest.raises(DataError):
        m.affine_align(np.ones_like(gt), gt)
    with pytest.raises(DataError):
        m.affine_align(gt[:, :2], gt)


def test_aligned_output_clamped():
    gt = np.random.default_rng(5).uniform(1, 10, (1, 8, 8, 3))
    pred = gt.copy()
    pred[0, 0, 0] = -100
    assert m.affine_align(pred, gt)[2].min() >= 0


def test_log_l1_direct():
    g = np.random.default_rng(6)
    a, b = g.uniform(0, 5, (2, 1, 6, 6, 3))
    want = np.mean([abs(math.log(x / 5 + 1e-6) - math.log(y / 5 + 1e-6)) for x, y in zip(a.ravel(), b.ravel())])
    assert m.log_l1(a, b, 5.0) == pytest.approx(want, abs=1e-12)
    assert m.log_l1(a, a, 5.0) == 0
    with pytest.raises(DataError):
        m.log_l1(a, b, 0.0)
    with pytest.raises(DataError):
        m.log_l1(-a, b, 1.0)


def test_evaluate_report():
    gt = np.random.default_rng(7).uniform(0.1, 10, (3, 8, 8, 3))
    cal, _ = m.preprocess_gt(gt)
    r = m.evaluate(cal / 2 + 1, gt)
    assert r["a"] == pytest.approx(2) and r["b"] == pytest.approx(-2)
    assert set(r) == {"a", "b", "pu_psnr_db", "log_l1", "per_frame"}
    assert [f["frame"] for f in r["per_frame"]] == [0, 1, 2]
    assert r["pu_psnr_db"] > 100 and r["log_l1"] < 1e-9


def test_reinhard():
    x = np.zeros((1, 2, 2, 3))
    x[0, 0, 0] = 1.0
    assert np.all(m.reinhard_tonemap(x, gamma=1.0)[0, 0, 0] == 0.5)
    assert np.all(m.reinhard_tonemap(x)[0, 1, 1] == 0)
    big = np.random.default_rng(8).uniform(0, 1e6, (1, 16, 16, 3))
    y = m.reinhard_tonemap(big, gamma=1.0)
    assert y.min() >= 0 and y.max() <= 1
    from bracketforge.core import luminance
    assert luminance(y).max() < 1


@given(st.floats(0, 1e5), st.floats(0, 1e5))
def test_reinhard_monotone_in_grey(lo, hi):
    lo, hi = sorted((lo, hi))
    v = m.reinhard_tonemap(np.array([lo, hi]).reshape(1, 1, 2, 1).repeat(3, -1))
    assert v[0, 0, 0, 0] <= v[0, 0, 1, 0]


def test_scanline():
    f = np.full((3, 4, 3), 0.5)
    text = m.scanline(f, 1)
    lines = text.strip().split("\n")
    assert lines[0] == "column,R,G,B" and len(lines) == 5 and lines[2] == "1,0.5,0.5,0.5"
    ramp = np.linspace(0, 1, 5)[None, :, None].repeat(2, 0).repeat(3, 2)
    assert m.scanline(ramp, 0).strip().split("\n")[-1] == "4,1,1,1"
    with pytest.raises(DataError):
        m.scanline(f, 3)
