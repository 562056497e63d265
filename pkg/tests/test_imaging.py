"""Resampling, padding, smoothing, normalization; fixture oracle corpus."""

import os
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anchorseg import imaging as I
from anchorseg import tensor as T
from anchorseg.errors import ConfigError, ContractError

FIXTURE = os.path.join(os.path.dirname(__file__), "data", "interp_oracle.bin")


class TestBilinear:
    def test_identity_same_extents(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(5, 7))
        np.testing.assert_array_equal(I.bilinear_resize(x, 5, 7), x)

    def test_halfpixel_upscale_row(self):
        # src = (i+0.5)/2 - 0.5 with edge clamp: [0, .25, .75, 1]
        out = I.bilinear_resize(np.array([[0.0, 1.0]]), 1, 4)
        np.testing.assert_allclose(out, [[0.0, 0.25, 0.75, 1.0]])

    @pytest.mark.parametrize("antialias", [False, True])
    def test_constant_preserved(self, antialias):
        x = np.full((6, 9), 3.7)
        out = I.bilinear_resize(x, 13, 4, antialias=antialias)
        np.testing.assert_allclose(out, 3.7, rtol=1e-12)

    def test_nonpositive_extent_rejected(self):
        with pytest.raises(ConfigError):
            I.bilinear_resize(np.ones((3, 3)), 0, 3)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        g = T.Tensor(rng.normal(size=(6, 5)), requires_grad=True, dtype=np.float64)
        w = T.Tensor(rng.normal(size=(9, 3)), dtype=np.float64)

        def fn():
            return T.tsum(T.mul(I.bilinear_resize(g, 9, 3, antialias=True), w))
        assert T.grad_check(fn, [("g", g)]) < 1e-4

    @given(st.integers(1, 24), st.integers(1, 24), st.integers(1, 24),
           st.integers(1, 24), st.booleans())
    @settings(max_examples=120, deadline=None)
    def test_partition_of_unity(self, ih, iw, oh, ow, antialias):
        wh = I.bilinear_weights(ih, oh, antialias)
        ww = I.bilinear_weights(iw, ow, antialias)
        np.testing.assert_allclose(wh.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(ww.sum(axis=1), 1.0, atol=1e-12)

    def test_upscale_then_exact_downscale_of_constant(self):
        x = np.full((4, 4), 1.25)
        up = I.bilinear_resize(x, 16, 16)
        down = I.bilinear_resize(up, 4, 4, antialias=True)
        np.testing.assert_allclose(down, x, rtol=1e-12)


class TestNearest:
    def test_floor_convention(self):
        out = I.nearest_resize(np.array([[0.0, 1.0, 2.0, 3.0]]), 1, 2)
        np.testing.assert_array_equal(out, [[0.0, 2.0]])

    def test_identity(self):
        x = np.random.default_rng(2).normal(size=(4, 6))
        np.testing.assert_array_equal(I.nearest_resize(x, 4, 6), x)

    def test_constant(self):
        out = I.nearest_resize(np.full((5, 5), 2.0), 3, 8)
        np.testing.assert_array_equal(out, np.full((3, 8), 2.0))


class TestCropPad:
    def test_full_crop_identity(self):
        x = np.arange(12.0).reshape(3, 4)
        np.testing.assert_array_equal(I.crop_top_left(x, 3, 4), x)

    def test_crop_indices(self):
        x = np.array([[1.0, 2, 9], [3, 4, 9], [9, 9, 9]])
        np.testing.assert_array_equal(I.crop_top_left(x, 2, 2), [[1.0, 2], [3, 4]])

    def test_single_pixel_crop(self):
        x = np.array([[7.0, 1], [2, 3]])
        np.testing.assert_array_equal(I.crop_top_left(x, 1, 1), [[7.0]])

    def test_crop_too_large(self):
        with pytest.raises(ContractError):
            I.crop_top_left(np.ones((2, 2)), 3, 1)

    def test_pad_identity(self):
        x = np.ones((2, 3))
        np.testing.assert_array_equal(I.pad_bottom_right_zero(x, 2, 3), x)

    def test_pad_one_to_two(self):
        np.testing.assert_array_equal(
            I.pad_bottom_right_zero(np.array([[1.0]]), 2, 2), [[1.0, 0], [0, 0]])

    def test_pad_smaller_rejected(self):
        with pytest.raises(ContractError):
            I.pad_bottom_right_zero(np.ones((3, 3)), 2, 3)

    def test_pad_then_crop_roundtrip(self):
        x = np.random.default_rng(3).normal(size=(3, 5))
        out = I.crop_top_left(I.pad_bottom_right_zero(x, 7, 8), 3, 5)
        np.testing.assert_array_equal(out, x)

    def test_crop_pad_gradients(self):
        rng = np.random.default_rng(4)
        g = T.Tensor(rng.normal(size=(4, 4)), requires_grad=True, dtype=np.float64)

        def fn():
            y = I.pad_bottom_right_zero(I.crop_top_left(g, 3, 2), 5, 5)
            return T.tsum(T.mul(y, y))
        assert T.grad_check(fn, [("g", g)]) < 1e-4


class TestLongSide:
    def test_crop_arithmetic_480_640(self):
        # alpha = 336/640 = 0.525 -> h' = floor(480*0.525+0.5) = 252, w' = 336
        assert I.scaled_long_side(480, 640, 336) == (252, 336)

    def test_square_input_no_padding(self):
        x = np.random.default_rng(5).random((10, 10))
        out, hs, ws = I.resize_long_side_pad(x, 6)
        assert (hs, ws) == (6, 6)
        np.testing.assert_allclose(out, I.bilinear_resize(x, 6, 6, antialias=True))

    def test_exact_identity_at_target(self):
        x = np.random.default_rng(6).random((8, 8))
        out, hs, ws = I.resize_long_side_pad(x, 8)
        assert (hs, ws) == (8, 8)
        np.testing.assert_array_equal(out, x)

    def test_pad_region_exactly_zero(self):
        x = np.random.default_rng(7).random((6, 12)) + 1.0
        out, hs, ws = I.resize_long_side_pad(x, 12)
        assert (hs, ws) == (6, 12)
        assert out.shape == (12, 12)
        np.testing.assert_array_equal(out[hs:, :], 0.0)
        x2 = np.random.default_rng(8).random((12, 5)) + 1.0
        out2, hs2, ws2 = I.resize_long_side_pad(x2, 12)
        np.testing.assert_array_equal(out2[:, ws2:], 0.0)


class TestGaussian:
    def test_constant_map_fixed(self):
        out = I.gaussian_smooth(np.full((40, 40), 0.75), I.GaussianSpec())
        np.testing.assert_allclose(out, 0.75, rtol=1e-12)

    def test_impulse_reproduces_kernel(self):
        imp = np.zeros((65, 65))
        imp[32, 32] = 1.0
        out = I.gaussian_smooth(imp, I.GaussianSpec(sigma=7.0, ksize=31))
        k = I.gaussian_kernel1d(7.0, 31)
        np.testing.assert_allclose(out[17:48, 17:48], np.outer(k, k), atol=1e-15)

    def test_kernel_normalization(self):
        k = I.gaussian_kernel1d(7.0, 31)
        assert abs(np.outer(k, k).sum() - 1.0) <= 1e-12

    def test_linearity(self):
        rng = np.random.default_rng(9)
        x, y = rng.normal(size=(20, 20)), rng.normal(size=(20, 20))
        spec = I.GaussianSpec(sigma=3.0, ksize=9)
        lhs = I.gaussian_smooth(2.0 * x + 0.5 * y, spec)
        rhs = 2.0 * I.gaussian_smooth(x, spec) + 0.5 * I.gaussian_smooth(y, spec)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_adaptive_sizing(self):
        eff = I.adapt_gaussian(I.GaussianSpec(7.0, 31), 8, 8)
        assert eff.ksize == 7
        assert eff.sigma == pytest.approx(7.0 * 7 / 31)
        assert I.adapt_gaussian(I.GaussianSpec(7.0, 31), 64, 64).ksize == 31

    def test_output_range_within_input_range(self):
        rng = np.random.default_rng(10)
        x = rng.random((30, 30))
        out = I.gaussian_smooth(x, I.GaussianSpec())
        assert out.min() >= x.min() - 1e-12
        assert out.max() <= x.max() + 1e-12

    def test_bad_spec(self):
        with pytest.raises(ConfigError):
            I.GaussianSpec(sigma=7.0, ksize=4)
        with pytest.raises(ConfigError):
            I.GaussianSpec(sigma=-1.0, ksize=3)


class TestMinmax:
    def test_basic(self):
        out = I.minmax_normalize(np.array([2.0, 4.0, 6.0]))
        np.testing.assert_allclose(out, [0.0, 0.5, 1.0], atol=1e-8)

    def test_constant_degenerate(self):
        np.testing.assert_array_equal(
            I.minmax_normalize(np.array([5.0, 5.0, 5.0])), [0.0, 0.0, 0.0])

    def test_negative_values(self):
        out = I.minmax_normalize(np.array([-1.0, 0.0, 3.0]))
        np.testing.assert_allclose(out, [0.0, 0.25, 1.0], atol=1e-8)

    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=30))
    @settings(max_examples=100, deadline=None)
    def test_range_and_argmax_preserved(self, vals):
        v = np.asarray(vals, dtype=np.float64)
        out = I.minmax_normalize(v)
        assert out.min() >= 0.0 and out.max() <= 1.0
        if v.max() > v.min():
            # the shift can merge sub-ulp gaps, so assert up to ties
            assert out[np.argmax(v)] == out.max()


class TestInterpolationOracle:
    def test_fixture_corpus(self):
        worst = 0.0
        n = 0
        with open(FIXTURE, "rb") as f:
            while True:
                head = f.read(20)
                if not head:
                    break
                ih, iw, oh, ow, flags = struct.unpack("<5I", head)
                x = np.frombuffer(f.read(4 * ih * iw), dtype="<f4").reshape(ih, iw)
                y = np.frombuffer(f.read(4 * oh * ow), dtype="<f4").reshape(oh, ow)
                if flags & 2:
                    mine = I.nearest_resize(x, oh, ow)
                else:
                    mine = I.bilinear_resize(x.astype(np.float64), oh, ow,
                                             antialias=bool(flags & 1))
                worst = max(worst, float(np.abs(mine - y).max()))
                n += 1
        assert n >= 50
        assert worst < 1e-5, f"fixture corpus mismatch: {worst}"
