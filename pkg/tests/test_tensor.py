import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ddpose.tensor import (
    ShapeError,
    aggregate_pyramid,
    bilinear_resize,
    binarize,
    conv2d,
    delta_kernel,
    pyramid_dims,
)
from oracles import conv_loop, resize_loop


def test_resize_identity_is_bitwise():
    t = np.random.default_rng(0).standard_normal((3, 5, 7)).astype(np.float32)
    out = bilinear_resize(t, 5, 7)
    assert out.dtype == t.dtype
    assert out.tobytes() == t.tobytes()


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 13), st.integers(1, 13))
def test_resize_preserves_constants(h, w, oh, ow):
    t = np.full((2, h, w), 3.5, np.float32)
    assert np.all(bilinear_resize(t, oh, ow) == 3.5)


def test_ramp_upsample_matches_closed_form():
    t = np.array([[[0.0, 1.0], [2.0, 3.0]]])
    # sample centers (i + 0.5) / 2 - 0.5, clamped: 0, 0.25, 0.75, 1
    s = np.array([0.0, 0.25, 0.75, 1.0])
    expected = 2 * s[:, None] + s[None, :]
    out = bilinear_resize(t, 4, 4)[0]
    np.testing.assert_allclose(out, expected, atol=1e-15)
    np.testing.assert_allclose(out, resize_loop(t, 4, 4)[0], atol=1e-15)


@pytest.mark.parametrize("shape,out", [((2, 3, 4), (7, 5)), ((1, 8, 8), (3, 3)), ((3, 1, 5), (4, 2))])
def test_resize_matches_loop_oracle(shape, out):
    t = np.random.default_rng(1).standard_normal(shape)
    np.testing.assert_allclose(bilinear_resize(t, *out), resize_loop(t, *out), atol=1e-12)


def test_resize_exact_on_affine_interior():
    h, w = 6, 5
    rows, cols = np.indices((h, w), dtype=np.float64)
    t = (1.5 + 0.25 * rows - 0.75 * cols)[None]
    out = bilinear_resize(t, 12, 10)[0]
    sy = (np.arange(12) + 0.5) * h / 12 - 0.5
    sx = (np.arange(10) + 0.5) * w / 10 - 0.5
    inside = ((sy >= 0) & (sy <= h - 1))[:, None] & ((sx >= 0) & (sx <= w - 1))[None, :]
    exact = 1.5 + 0.25 * sy[:, None] - 0.75 * sx[None, :]
    np.testing.assert_allclose(out[inside], exact[inside], atol=1e-12)


def test_resize_rejects_empty():
    with pytest.raises(ShapeError, match="empty tensor"):
        bilinear_resize(np.zeros((1, 0, 3)), 2, 2)
    with pytest.raises(ShapeError):
        bilinear_resize(np.zeros((1, 2, 2)), 0, 2)


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_matches_loop(stride):
    rng = np.random.default_rng(2)
    x = rng.standard_normal((3, 7, 6))
    w = rng.standard_normal((3, 3, 3, 4))
    b = rng.standard_normal(4)
    np.testing.assert_allclose(conv2d(x, w, b, stride), conv_loop(x, w, b, stride), atol=1e-12)


def test_conv_channel_mismatch():
    with pytest.raises(ShapeError, match="channel mismatch"):
        conv2d(np.zeros((2, 4, 4)), np.zeros((3, 3, 3, 1)))


def _pyramid(rng, c=3, base=32, n=4):
    return [rng.standard_normal((c, h, w)) for h, w in pyramid_dims(base, base, n)]


def test_aggregate_single_level_identity():
    lvl = np.random.default_rng(3).standard_normal((4, 8, 8))
    out = aggregate_pyramid([lvl], [(delta_kernel(4, dtype=np.float64), None)])
    np.testing.assert_array_equal(out, lvl)


def test_aggregate_zero_levels():
    pyr = [np.zeros_like(l) for l in _pyramid(np.random.default_rng(0))]
    convs = [(np.random.default_rng(k).standard_normal((3, 3, 3, 3)), None) for k in range(4)]
    assert np.all(aggregate_pyramid(pyr, convs) == 0)


def test_aggregate_two_levels_delta():
    rng = np.random.default_rng(4)
    l0, l1 = _pyramid(rng, base=40, n=2)
    d = delta_kernel(3, dtype=np.float64)
    out = aggregate_pyramid([l0, l1], [(d, None), (d, None)])
    np.testing.assert_allclose(out, l0 + resize_loop(l1, *l0.shape[1:]), atol=1e-12)


def test_aggregate_is_additive():
    rng = np.random.default_rng(5)
    a, b = _pyramid(rng, base=48), _pyramid(rng, base=48)
    convs = [(rng.standard_normal((3, 3, 3, 3)), rng.standard_normal(3)) for _ in range(4)]
    no_bias = [(w, None) for w, _ in convs]
    lhs = aggregate_pyramid([x + y for x, y in zip(a, b)], no_bias)
    rhs = aggregate_pyramid(a, no_bias) + aggregate_pyramid(b, no_bias)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)
    assert np.all(np.isfinite(aggregate_pyramid(a, convs)))


def test_aggregate_output_at_finest_scale():
    rng = np.random.default_rng(6)
    pyr = _pyramid(rng, base=100)
    convs = [(delta_kernel(3, dtype=np.float64), None)] * 4
    assert aggregate_pyramid(pyr, convs).shape == (3, 25, 25)


def test_aggregate_errors():
    rng = np.random.default_rng(7)
    pyr = _pyramid(rng)
    with pytest.raises(ShapeError, match="channels"):
        aggregate_pyramid(pyr, [(delta_kernel(2), None)] * 4)
    bad = [pyr[0], rng.standard_normal((3, 5, 5))]
    with pytest.raises(ShapeError, match="halve"):
        aggregate_pyramid(bad, [(delta_kernel(3), None)] * 2)
    mixed = [pyr[0], rng.standard_normal((2,) + pyr[1].shape[1:])]
    with pytest.raises(ShapeError):
        aggregate_pyramid(mixed, [(delta_kernel(3), None)] * 2)


def test_pyramid_dims_follow_ceil():
    assert pyramid_dims(100, 60) == [(25, 15), (13, 8), (7, 4), (4, 2)]


def test_binarize():
    assert np.all(binarize(np.full((1, 3, 3), 0.9)) == 1)
    assert np.all(binarize(np.full((1, 3, 3), 0.5), 0.5) == 0)
    np.testing.assert_array_equal(binarize(np.array([[[0.2, 0.7]]])), [[0, 1]])
    assert binarize(np.full((1, 2, 2), 0.9)).dtype == np.uint8
    with pytest.raises(ShapeError):
        binarize(np.zeros((2, 3, 3)))
