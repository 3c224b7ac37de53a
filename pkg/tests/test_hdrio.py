import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bracketforge import hdrio
from bracketforge.core import DataError


def test_pfm_single_pixel_round_trip(tmp_path):
    f = np.array([[[0.25, 0.5, 0.75]]], dtype=np.float32)
    hdrio.write_pfm(f, tmp_path / "a.pfm")
    assert np.array_equal(hdrio.read_pfm(tmp_path / "a.pfm"), f)


def test_pfm_layout_is_little_endian_bottom_up(tmp_path):
    f = np.arange(2 * 3 * 3, dtype=np.float32).reshape(2, 3, 3)
    hdrio.write_pfm(f, tmp_path / "a.pfm")
    raw = (tmp_path / "a.pfm").read_bytes()
    assert raw.startswith(b"PF\n3 2\n-1.0\n")
    payload = np.frombuffer(raw[len(b"PF\n3 2\n-1.0\n"):], "<f4").reshape(2, 3, 3)
    assert np.array_equal(payload[0], f[1])


def test_pfm_big_endian_read(tmp_path):
    f = np.array([[[1.5, -2.0, 3.25]]], dtype=np.float32)
    (tmp_path / "b.pfm").write_bytes(b"PF\n1 1\n1.0\n" + f.astype(">f4").tobytes())
    assert np.array_equal(hdrio.read_pfm(tmp_path / "b.pfm"), f)


finite32 = st.floats(width=32, allow_nan=False, allow_infinity=False, allow_subnormal=True)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 5), st.integers(1, 5), st.just(3)), elements=finite32))
def test_pfm_round_trip_bit_exact(tmp_path_factory, frame):
    p = tmp_path_factory.mktemp("pfm") / "x.pfm"
    hdrio.write_pfm(frame, p)
    back = hdrio.read_pfm(p)
    assert back.tobytes() == frame.tobytes()


def test_pfm_denormals(tmp_path):
    tiny = np.float32(np.finfo(np.float32).smallest_subnormal)
    f = np.full((1, 2, 3), tiny, dtype=np.float32)
    hdrio.write_pfm(f, tmp_path / "d.pfm")
    assert hdrio.read_pfm(tmp_path / "d.pfm").tobytes() == f.tobytes()


@pytest.mark.parametrize("content", [
    b"Pf\n1 1\n-1.0\n" + b"\0" * 4,
    b"P6\n1 1\n-1.0\n" + b"\0" * 12,
    b"PF\n1 x\n-1.0\n" + b"\0" * 12,
    b"PF\n1 1\nabc\n" + b"\0" * 12,
    b"PF\n2 2\n-1.0\n" + b"\0" * 12,
    b"PF\n1 1\n-1.0\n" + b"\0" * 16,
    b"PF\n1 1",
])
def test_pfm_malformed(tmp_path, content):
    (tmp_path / "bad.pfm").write_bytes(content)
    with pytest.raises(DataError):
        hdrio.read_pfm(tmp_path / "bad.pfm")


def test_png_codes(tmp_path):
    f = np.array([[[0.0, 1.0, 0.5]]])
    hdrio.write_png8(f, tmp_path / "a.png")
    back = hdrio.read_png8(tmp_path / "a.png")
    assert back[0, 0, 0] == 0.0 and back[0, 0, 1] == 1.0
    assert back[0, 0, 2] == np.float32(128 / 255)
    assert hdrio.quantize8(0.5) == 128  # 127.5 rounds away from zero


def test_png_rejects_out_of_range(tmp_path):
    with pytest.raises(DataError):
        hdrio.write_png8(np.full((1, 1, 3), 1.2), tmp_path / "a.png")


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 4, 3), elements=st.floats(0, 1)))
def test_quantize_decode_idempotent(x):
    q = hdrio.quantize8(x)
    assert np.array_equal(hdrio.quantize8(q / 255.0), q)


def test_png_round_trip(tmp_path, gen):
    codes = gen.integers(0, 256, size=(5, 6, 3))
    hdrio.write_png8(codes / 255.0, tmp_path / "c.png")
    assert np.array_equal(hdrio.quantize8(hdrio.read_png8(tmp_path / "c.png")), codes)


def manifest(exposures, **kw):
    paths = [[f"e{k}/f0.png"] for k in range(len(exposures))]
    return hdrio.BracketManifest(paths=paths, exposures=exposures, **kw)


def test_manifest_round_trip(tmp_path):
    m = manifest([0.00125, 0.02, 0.32], crf={"n": 0.9, "sigma": 0.6}, seed=7)
    hdrio.write_manifest(m, tmp_path / "m.json")
    assert hdrio.read_manifest(tmp_path / "m.json") == m


def test_manifest_spacing_validates():
    m = manifest([0.02, 0.02 * 2 ** -4, 0.02 * 2 ** 4])
    m.check_spacing()
    with pytest.raises(DataError):
        manifest([0.02, 0.03, 0.04]).check_spacing()


def test_manifest_written_sorted(tmp_path):
    m = manifest([0.32, 0.00125, 0.02])
    hdrio.write_manifest(m, tmp_path / "m.json")
    raw = json.loads((tmp_path / "m.json").read_text())
    assert raw["exposures"] == [0.00125, 0.02, 0.32]
    assert raw["paths"] == [["e1/f0.png"], ["e2/f0.png"], ["e0/f0.png"]]
    assert list(raw) == sorted(raw)


@pytest.mark.parametrize("raw", [
    {"paths": [["a.png"]]},
    {"exposures": [1.0]},
    {"paths": [["a.png"]], "exposures": [-1.0]},
    {"paths": [["a.png"], ["b.png", "c.png"]], "exposures": [1.0, 2.0]},
    {"paths": [["a.png"]], "exposures": [1.0], "crf": {"n": 0.9}},
])
def test_manifest_errors(tmp_path, raw):
    (tmp_path / "m.json").write_text(json.dumps(raw))
    with pytest.raises(DataError):
        hdrio.read_manifest(tmp_path / "m.json")


def test_manifest_unknown_key_warns(tmp_path):
    (tmp_path / "m.json").write_text(json.dumps({"paths": [["a.png"]], "exposures": [1.0], "extra": 1}))
    with pytest.warns(UserWarning):
        hdrio.read_manifest(tmp_path / "m.json")


def test_read_video_dir(tmp_path):
    for i in range(3):
        hdrio.write_pfm(np.full((2, 2, 3), float(i), np.float32), tmp_path / f"frame_{i:04d}.pfm")
    v = hdrio.read_video_dir(tmp_path)
    assert v.shape == (3, 2, 2, 3) and v[2, 0, 0, 0] == 2.0
    with pytest.raises(DataError):
        hdrio.read_video_dir(tmp_path / "missing")
