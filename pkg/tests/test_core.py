import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bracketforge.core import ColorSpace, DataError, Video, luminance, mean_luminance


def test_luminance_weights():
    assert luminance(np.ones((1, 1, 3)))[0, 0] == pytest.approx(1.0, abs=1e-15)
    assert luminance(np.array([[[1.0, 0.0, 0.0]]]))[0, 0] == pytest.approx(0.2126)


def test_luminance_uniform_frame():
    # 0.2126*0.2 + 0.7152*0.5 + 0.0722*0.1
    frame = np.broadcast_to([0.2, 0.5, 0.1], (4, 5, 3))
    np.testing.assert_allclose(luminance(frame), 0.4073, atol=5e-5)
    np.testing.assert_allclose(luminance(frame), 0.40734, rtol=1e-14)


def test_luminance_rejects_wrong_channels():
    with pytest.raises(DataError):
        luminance(np.zeros((2, 2, 4)))


def test_mean_luminance_examples():
    assert mean_luminance(np.full((3, 3, 3), 0.5)) == pytest.approx(0.5)
    half = np.zeros((2, 2, 3))
    half[0] = 1.0
    assert mean_luminance(half) == pytest.approx(0.5)
    two = np.array([[[0.1] * 3, [0.7] * 3]])
    assert mean_luminance(two) == pytest.approx(0.4)


def test_mean_luminance_empty():
    with pytest.raises(DataError):
        mean_luminance(np.zeros((0, 0, 3)))


small_frames = arrays(np.float64, (3, 4, 3), elements=st.floats(0, 100, allow_nan=False))


@settings(max_examples=50, deadline=None)
@given(small_frames, small_frames, st.floats(-10, 10), st.floats(-10, 10))
def test_luminance_is_linear(f1, f2, a, b):
    lhs = luminance(a * f1 + b * f2)
    rhs = a * luminance(f1) + b * luminance(f2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-6 * (1 + np.abs(rhs).max()))


def test_video_promotes_frame_and_freezes():
    v = Video(np.zeros((2, 3, 3)))
    assert v.frame_count == 1 and v.height == 2 and v.width == 3
    assert v.data.dtype == np.float32
    with pytest.raises(ValueError):
        v.data[0, 0, 0, 0] = 1.0


@pytest.mark.parametrize("data,space", [
    (np.full((1, 2, 2, 3), -0.1), ColorSpace.LinearRadiance),
    (np.full((1, 2, 2, 3), 1.5), ColorSpace.CrfEncoded),
    (np.full((1, 2, 2, 3), -0.5), ColorSpace.LinearDisplay),
    (np.full((1, 2, 2, 3), np.nan), ColorSpace.LinearRadiance),
    (np.zeros((1, 2, 2, 4)), ColorSpace.LinearRadiance),
])
def test_video_rejects_invalid(data, space):
    with pytest.raises(DataError):
        Video(data, space)


def test_video_equality():
    a = Video(np.ones((1, 2, 2, 3)), ColorSpace.LinearDisplay)
    b = Video(np.ones((1, 2, 2, 3)), ColorSpace.LinearDisplay)
    c = Video(np.ones((1, 2, 2, 3)), ColorSpace.LinearRadiance)
    assert a == b and a != c
