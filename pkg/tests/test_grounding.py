"""Anchor responses, the conditioning chain, injection and fusion."""

import numpy as np
import pytest

from anchorseg import grounding as G
from anchorseg import imaging as I
from anchorseg import tensor as T
from anchorseg.config import paper_shape_dims
from anchorseg.errors import ContractError
from anchorseg.optim import Parameter


def t64(x, rg=False):
    return T.Tensor(np.asarray(x, dtype=np.float64), requires_grad=rg)


class TestSpatialResponses:
    def test_basis_tokens(self):
        tokens = t64(np.eye(2))
        out = G.spatial_responses(tokens, t64([1.0, 0.0]))
        np.testing.assert_array_equal(out.data, [1.0, 0.0])

    def test_zero_anchor(self):
        tokens = t64(np.random.default_rng(0).normal(size=(5, 3)))
        out = G.spatial_responses(tokens, t64(np.zeros(3)))
        np.testing.assert_array_equal(out.data, np.zeros(5))

    def test_dot_product_value(self):
        out = G.spatial_responses(t64([[1.0, 2.0, 3.0]]), t64([4.0, 5.0, 6.0]))
        assert out.data[0] == 32.0

    def test_dim_mismatch(self):
        with pytest.raises(ContractError):
            G.spatial_responses(t64(np.ones((4, 3))), t64(np.ones(2)))

    def test_scale_covariance_and_normalized_invariance(self):
        rng = np.random.default_rng(1)
        tokens = rng.normal(size=(16, 6)).astype(np.float32)
        q = rng.normal(size=6).astype(np.float32)
        s1 = G.spatial_responses(T.Tensor(tokens), T.Tensor(q)).data
        s2 = G.spatial_responses(T.Tensor(tokens), T.Tensor(2.0 * q)).data
        np.testing.assert_allclose(s2, 2.0 * s1, rtol=1e-6)
        # power-of-two scaling is exact in floats; in float32 the eps guard
        # vanishes below the ulp of the span, so the maps are bit-identical
        n1 = I.minmax_normalize(T.Tensor(s1)).data
        n2 = I.minmax_normalize(T.Tensor(s2)).data
        assert n1.tobytes() == n2.tobytes()
        assert np.argmax(n1) == np.argmax(n2)


class TestBuildSpatialPrior:
    def test_paper_shape_profile(self):
        dims = paper_shape_dims()
        rng = np.random.default_rng(2)
        raw = t64(rng.normal(size=(dims["G"] ** 2,)))
        head = G.init_conv_head(rng, dims["C"], (2, 2, 1), dtype=np.float64)
        prior, inter = G.build_spatial_prior(
            raw, dims["h"], dims["w"], dims["L_vl"], dims["L_sam"], head,
            return_intermediates=True)
        assert prior.shape == (256, 64, 64)
        assert inter["grid"].shape == (1, 24, 24)
        assert inter["upsampled"].shape == (1, 336, 336)
        assert inter["crop_hw"] == (252, 336)
        assert inter["restored"].shape == (1, 480, 640)
        assert inter["canvas"].shape == (1, 256, 256)
        # long-side scaling into the square canvas: 480x640 -> 192x256
        assert inter["canvas_hw"] == (192, 256)
        pad = inter["canvas"].data[:, 192:, :]
        np.testing.assert_array_equal(pad, 0.0)

    def test_constant_raw_zero_biases_gives_zero_prior(self):
        rng = np.random.default_rng(3)
        head = G.init_conv_head(rng, 8, (2, 1, 1), dtype=np.float64)
        raw = t64(np.full(16, 3.3))
        prior = G.build_spatial_prior(raw, 16, 16, 16, 8, head)
        np.testing.assert_array_equal(prior.data, np.zeros((8, 4, 4)))

    def test_non_square_token_count(self):
        rng = np.random.default_rng(4)
        head = G.init_conv_head(rng, 8, (2, 1, 1), dtype=np.float64)
        with pytest.raises(ContractError):
            G.build_spatial_prior(t64(np.ones(15)), 16, 16, 16, 8, head)

    def test_end_to_end_gradient_wrt_anchor(self):
        rng = np.random.default_rng(5)
        tokens = t64(rng.normal(size=(16, 5)))
        q = t64(rng.normal(size=5), rg=True)
        head = G.init_conv_head(rng, 4, (2, 1, 1), dtype=np.float64)
        w = t64(rng.normal(size=(4, 4, 4)))

        def fn():
            raw = G.spatial_responses(tokens, q)
            prior = G.build_spatial_prior(raw, 16, 16, 16, 8, head)
            return T.tsum(T.mul(prior, w))
        assert T.grad_check(fn, [("q_anc", q)]) < 1e-4


class TestInjectPrior:
    def test_zero_prior_degrades_to_baseline(self):
        f = t64(np.random.default_rng(6).normal(size=(2, 3, 3)))
        out = G.inject_prior(f, t64(np.zeros((2, 3, 3))))
        np.testing.assert_array_equal(out.data, f.data)

    def test_zero_features(self):
        p = t64(np.random.default_rng(7).normal(size=(2, 3, 3)))
        out = G.inject_prior(t64(np.zeros((2, 3, 3))), p)
        np.testing.assert_array_equal(out.data, p.data)

    def test_pointwise_sum(self):
        out = G.inject_prior(t64([[[1.0, 2.0]]]), t64([[[3.0, 4.0]]]))
        np.testing.assert_array_equal(out.data, [[[4.0, 6.0]]])

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            G.inject_prior(t64(np.zeros((2, 3, 3))), t64(np.zeros((2, 4, 3))))


class TestFusion:
    def test_single_prior_identity_init(self):
        prior = t64(np.random.default_rng(8).normal(size=(4, 3, 3)))
        fusion = G.FusionParams.identity(4, 1, dtype=np.float64)
        out = G.fuse_multi_anchor([prior], fusion)
        np.testing.assert_allclose(out.data, prior.data, rtol=1e-12)

    def test_two_identical_priors_averaging_map(self):
        c = 3
        prior = t64(np.random.default_rng(9).normal(size=(c, 2, 2)))
        w = np.zeros((c, 2 * c, 1, 1))
        for i in range(c):
            w[i, i, 0, 0] = 0.5
            w[i, c + i, 0, 0] = 0.5
        fusion = G.FusionParams(weight=Parameter(w, "fw", dtype=np.float64),
                                bias=Parameter(np.zeros(c), "fb", dtype=np.float64))
        out = G.fuse_multi_anchor([prior, prior], fusion)
        np.testing.assert_allclose(out.data, prior.data, rtol=1e-12)

    def test_zero_priors_zero_output(self):
        fusion = G.FusionParams.identity(4, 2, dtype=np.float64)
        priors = [t64(np.zeros((4, 2, 2))), t64(np.zeros((4, 2, 2)))]
        out = G.fuse_multi_anchor(priors, fusion)
        np.testing.assert_array_equal(out.data, np.zeros((4, 2, 2)))

    def test_heterogeneous_shapes(self):
        fusion = G.FusionParams.identity(4, 2, dtype=np.float64)
        with pytest.raises(ContractError):
            G.fuse_multi_anchor([t64(np.zeros((4, 2, 2))),
                                 t64(np.zeros((4, 3, 2)))], fusion)
