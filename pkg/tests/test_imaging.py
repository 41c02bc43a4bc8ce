import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ofx import imaging
from ofx.imaging import convolve, gaussian_kernel, resize


def _bilinear_oracle(img, out_h, out_w):
    """Per-pixel bilinear sampling, written independently of the matrix path."""
    h, w = img.shape
    out = np.empty((out_h, out_w))
    for i in range(out_h):
        sy = (i + 0.5) * h / out_h - 0.5
        y0 = math.floor(sy)
        fy = sy - y0
        for j in range(out_w):
            sx = (j + 0.5) * w / out_w - 0.5
            x0 = math.floor(sx)
            fx = sx - x0

            def px(y, x):
                return img[min(max(y, 0), h - 1), min(max(x, 0), w - 1)]

            out[i, j] = ((1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1))
                         + fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1)))
    return out


@pytest.mark.parametrize("method", imaging.RESIZE_METHODS)
def test_same_size_resize_is_identity(method):
    img = np.random.default_rng(0).uniform(0, 255, (7, 9))
    np.testing.assert_array_equal(resize(img, 7, 9, method), img)


def test_bilinear_ramp_matches_hand_values():
    img = np.array([[0.0, 255.0], [0.0, 255.0]])
    out = resize(img, 2, 4, "bilinear")
    # sample centres at x = -0.25, 0.25, 0.75, 1.25 (edge-clamped)
    np.testing.assert_allclose(out, [[0, 63.75, 191.25, 255]] * 2, atol=1e-12)
    row = out[0]
    assert all(row[1:] > row[:-1])


@pytest.mark.parametrize("shape,out", [((5, 7), (11, 3)), ((4, 4), (9, 13)), ((13, 6), (5, 5))])
def test_bilinear_matches_pointwise_oracle(shape, out):
    img = np.random.default_rng(1).uniform(0, 255, shape)
    np.testing.assert_allclose(resize(img, *out, "bilinear"), _bilinear_oracle(img, *out), atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(h=st.integers(1, 12), w=st.integers(1, 12), oh=st.integers(1, 30), ow=st.integers(1, 30),
       value=st.floats(0, 255), method=st.sampled_from(imaging.RESIZE_METHODS))
def test_resize_exact_on_constant_images(h, w, oh, ow, value, method):
    out = resize(np.full((h, w), value), oh, ow, method)
    assert out.shape == (oh, ow)
    assert np.max(np.abs(out - value)) < 1e-6


@settings(max_examples=30, deadline=None)
@given(h=st.integers(1, 10), w=st.integers(1, 10), oh=st.integers(1, 25), ow=st.integers(1, 25),
       seed=st.integers(0, 1000))
def test_nearest_resize_keeps_binary(h, w, oh, ow, seed):
    grid = (np.random.default_rng(seed).random((h, w)) > 0.5).astype(float)
    out = resize(grid, oh, ow, "nearest")
    assert set(np.unique(out)) <= {0.0, 1.0}


def test_resize_round_trip_on_gradient():
    yy, xx = np.mgrid[:40, :60]
    img = 40 + 2.0 * xx + 1.5 * yy
    back = resize(resize(img, 80, 120, "bilinear"), 40, 60, "bilinear")
    assert np.max(np.abs(back - img)) < 2.0


def test_resize_clamps_bicubic_overshoot():
    img = np.zeros((4, 8))
    img[:, 4:] = 255
    out = resize(img, 4, 20, "bicubic")
    assert out.min() >= 0 and out.max() <= 255


@pytest.mark.parametrize("size", [(0, 5), (5, 0)])
def test_resize_rejects_empty_target(size):
    with pytest.raises(ValueError):
        resize(np.ones((3, 3)), *size)


def test_convolve_identity_kernel():
    img = np.random.default_rng(2).uniform(0, 255, (6, 8))
    np.testing.assert_array_equal(convolve(img, np.ones((1, 1))), img)


def test_convolve_box_preserves_constant_with_edge_padding():
    np.testing.assert_allclose(convolve(np.ones((3, 3)), np.full((3, 3), 1 / 9), "edge"), np.ones((3, 3)))


def test_convolve_centre_of_impulse():
    img = np.zeros((3, 3))
    img[1, 1] = 9
    out = convolve(img, np.full((3, 3), 1 / 9), "zero")
    assert out[1, 1] == pytest.approx(1.0)


def test_convolve_rejects_even_kernel():
    with pytest.raises(ValueError):
        convolve(np.ones((4, 4)), np.ones((2, 3)))


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 1000))
def test_convolve_is_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    i1, i2 = rng.uniform(0, 255, (2, 6, 7))
    k = rng.uniform(-1, 1, (3, 5))
    lhs = convolve(a * i1 + b * i2, k, "zero")
    rhs = a * convolve(i1, k, "zero") + b * convolve(i2, k, "zero")
    np.testing.assert_allclose(lhs, rhs, atol=1e-6)


def test_gaussian_kernel_shape_and_normalisation():
    g = gaussian_kernel(3, 2.0)
    assert g.shape == (3, 3)
    assert abs(g.sum() - 1) < 1e-12
    assert g[1, 1] > g[0, 0]
    assert g[0, 0] / g[1, 1] == pytest.approx(math.exp(-0.25), rel=1e-12)
    np.testing.assert_allclose(g, g.T)


def test_png_and_pgm_round_trip(tmp_path):
    img = np.random.default_rng(4).integers(0, 256, (12, 17)).astype(float)
    for name in ("a.png", "a.pgm"):
        imaging.write_image(tmp_path / name, img)
        np.testing.assert_array_equal(imaging.read_image(tmp_path / name), img)
    assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5")


def test_mask_io_thresholds_at_128(tmp_path):
    raw = np.array([[0, 127, 128, 255]], dtype=float)
    imaging.write_image(tmp_path / "m.png", raw)
    np.testing.assert_array_equal(imaging.read_mask(tmp_path / "m.png"), [[0, 0, 1, 1]])
    imaging.write_mask(tmp_path / "m2.png", np.array([[0, 1]]))
    np.testing.assert_array_equal(imaging.read_image(tmp_path / "m2.png"), [[0, 255]])


def test_quantize_rounds_half_up_and_clamps():
    np.testing.assert_array_equal(imaging.quantize(np.array([-3, 0.5, 1.49, 254.5, 300])), [0, 1, 1, 255, 255])


def test_unsupported_format(tmp_path):
    with pytest.raises(ValueError):
        imaging.write_image(tmp_path / "x.jpg", np.zeros((2, 2)))
