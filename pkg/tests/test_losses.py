"""Feature extractor determinism and the loss terms built on it."""

import numpy as np
import pytest

from stylebank import Tape, Tensor, ops
from stylebank.losses import (
    FeatureExtractor,
    FeaturePyramid,
    LossWeights,
    content_loss,
    extract,
    gram_targets,
    identity_loss,
    perceptual_loss,
    rescale_long_side,
    style_loss,
)

import oracles


@pytest.fixture(scope="module")
def extractor():
    return FeatureExtractor.random()


def rand_image(shape=(1, 3, 16, 16), seed=0):
    rng = np.random.default_rng(seed)
    return Tensor(rng.uniform(0, 1, size=shape).astype(np.float32))


class TestExtractor:
    def test_tap_resolutions_halve_per_stage(self, extractor):
        pyr = extract(extractor, rand_image((1, 3, 64, 64)))
        assert pyr["L1"].dims == (1, 16, 64, 64)
        assert pyr["L2"].dims == (1, 32, 32, 32)
        assert pyr["L3"].dims == (1, 64, 16, 16)
        assert pyr["L4"].dims == (1, 128, 8, 8)

    def test_same_seed_same_pyramid(self):
        img = rand_image(seed=1)
        a = extract(FeatureExtractor.random(seed=123), img)
        b = extract(FeatureExtractor.random(seed=123), img)
        for name in a.tap_names():
            assert np.array_equal(a[name].data, b[name].data)

    def test_different_seed_different_weights(self):
        a = FeatureExtractor.random(seed=1)
        b = FeatureExtractor.random(seed=2)
        assert not np.array_equal(a.convs[0][0].data, b.convs[0][0].data)

    def test_indivisible_dims_rejected(self, extractor):
        with pytest.raises(ValueError):
            extract(extractor, rand_image((1, 3, 12, 16)))

    def test_gradient_flows_to_image(self, extractor):
        ext64 = extractor.astype(np.float64)
        rng = np.random.default_rng(2)
        x = rng.uniform(0, 1, size=(1, 3, 8, 8))

        def loss_fn(arr):
            pyr = extract(ext64, Tensor(arr, dtype=np.float64))
            return float(pyr["L4"].data.sum())

        t = Tensor(x.copy(), requires_grad=True, dtype=np.float64)
        with Tape() as tape:
            loss = extract(ext64, t)["L4"].sum()
        tape.backward(loss)
        numeric = oracles.finite_difference_grad(loss_fn, x)
        assert oracles.relative_error(t.grad, numeric) < 1e-4

    def test_kernels_are_frozen(self, extractor):
        assert all(not k.requires_grad for k, _ in extractor.convs)

    def test_bad_channel_chain_rejected(self):
        k1 = Tensor(np.zeros((4, 3, 3, 3), dtype=np.float32))
        k2 = Tensor(np.zeros((4, 5, 3, 3), dtype=np.float32))
        with pytest.raises(ValueError):
            FeatureExtractor([(k1, 1), (k2, 2)], {1: "L1"})


class TestContentLoss:
    def test_identical_pyramids_zero(self, extractor):
        pyr = extract(extractor, rand_image(seed=3))
        assert content_loss(pyr, pyr).item() == 0.0

    def test_quadratic_in_perturbation(self, extractor):
        base = rand_image(seed=4)
        rng = np.random.default_rng(5)
        delta = rng.standard_normal(base.dims).astype(np.float32) * 1e-3
        ref = extract(extractor, base)
        l1 = content_loss(extract(extractor, Tensor(base.data + delta)), ref).item()
        l2 = content_loss(extract(extractor, Tensor(base.data + 2 * delta)), ref).item()
        assert l2 == pytest.approx(4 * l1, rel=0.05)

    def test_hand_built_taps(self):
        a = FeaturePyramid({"L4": Tensor(np.asarray([[[[1.0, 2.0], [3.0, 4.0]]]]))})
        b = FeaturePyramid({"L4": Tensor(np.asarray([[[[1.0, 2.0], [3.0, 0.0]]]]))})
        # Explicit sum: only one element differs, (4-0)^2 / 4 = 4.
        assert content_loss(a, b).item() == 4.0

    def test_tap_mismatch_rejected(self, extractor):
        pyr = extract(extractor, rand_image(seed=6))
        with pytest.raises(ValueError):
            content_loss(pyr, FeaturePyramid({"L1": pyr["L1"]}))


class TestStyleLoss:
    def test_output_equals_style_zero(self, extractor):
        pyr = extract(extractor, rand_image(seed=7))
        assert style_loss(pyr, pyr).item() == 0.0

    def test_invariant_to_spatial_permutation(self, extractor):
        rng = np.random.default_rng(8)
        feats = {
            name: rng.standard_normal((1, 4, 2, 4)).astype(np.float32)
            for name in ("L1", "L2", "L3", "L4")
        }
        pyr = FeaturePyramid({k: Tensor(v) for k, v in feats.items()})
        perm = rng.permutation(8)
        shuffled = FeaturePyramid({
            k: Tensor(v.reshape(1, 4, 8)[:, :, perm].reshape(1, 4, 2, 4))
            for k, v in feats.items()
        })
        assert style_loss(shuffled, pyr).item() < 1e-10

    def test_hand_computable_from_gram_example(self):
        # Gram of channels [1,2],[3,4] is [[1.25,2.75],[2.75,6.25]]; against a
        # zero-feature target the loss is mean of its squares, per tap.
        f = np.asarray([[[[1.0, 2.0]], [[3.0, 4.0]]]])
        g = oracles.naive_gram(f)[0]
        expected_per_tap = float((g ** 2).mean())
        out = FeaturePyramid({name: Tensor(f) for name in ("L1", "L2", "L3", "L4")})
        zero = FeaturePyramid({name: Tensor(np.zeros_like(f)) for name in ("L1", "L2", "L3", "L4")})
        got = style_loss(out, zero).item()
        assert got == pytest.approx(4 * expected_per_tap, rel=1e-6)

    def test_cached_grams_bit_identical(self, extractor):
        style_img = rand_image(seed=9)
        out_img = rand_image(seed=10)
        pyr_style = extract(extractor, style_img)
        pyr_out = extract(extractor, out_img)
        fresh = style_loss(pyr_out, pyr_style).item()
        cached = style_loss(pyr_out, gram_targets(pyr_style)).item()
        assert fresh == cached


class TestIdentityLoss:
    def test_equal_images(self):
        img = rand_image(seed=11)
        assert identity_loss(img, Tensor(img.data.copy())).item() == 0.0

    def test_matches_mse(self):
        a, b = rand_image(seed=12), rand_image(seed=13)
        assert identity_loss(a, b).item() == ops.mse(b, a).item()


class TestPerceptualLoss:
    def test_all_zero_weights_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(0.0, 0.0, 0.0)

    def test_output_equals_content_leaves_style_only(self, extractor):
        img = rand_image(seed=14)
        style = gram_targets(extract(extractor, rand_image(seed=15)))
        weights = LossWeights(content=3.0, style=2.0, tv=0.0)
        total, comps = perceptual_loss(extractor, img, style, img, weights)
        assert comps["content"] == 0.0
        assert total.item() == pytest.approx(2.0 * comps["style"], rel=1e-6)

    def test_components_recombine(self, extractor):
        content = rand_image(seed=16)
        output = rand_image(seed=17)
        style = gram_targets(extract(extractor, rand_image(seed=18)))
        weights = LossWeights(content=1.0, style=50.0, tv=1e-5)
        total, comps = perceptual_loss(extractor, content, style, output, weights)
        recombined = (
            weights.content * comps["content"]
            + weights.style * comps["style"]
            + weights.tv * comps["tv"]
        )
        assert abs(total.item() - recombined) < 1e-9

    def test_nonnegative_and_zero_at_fixed_point(self, extractor):
        img = rand_image(seed=19)
        style = gram_targets(extract(extractor, img))
        weights = LossWeights(content=1.0, style=1.0, tv=0.0)
        total, comps = perceptual_loss(extractor, img, style, img, weights)
        assert total.item() == 0.0
        assert all(v >= 0.0 for v in comps.values())

    def test_end_to_end_gradient_at_8x8(self, extractor):
        ext64 = extractor.astype(np.float64)
        rng = np.random.default_rng(20)
        content = rng.uniform(0, 1, size=(1, 3, 8, 8))
        output = rng.uniform(0, 1, size=(1, 3, 8, 8))
        style = gram_targets(extract(ext64, Tensor(rng.uniform(0, 1, (1, 3, 8, 8)), dtype=np.float64)))
        weights = LossWeights(1.0, 50.0, 1e-5)

        t_out = Tensor(output.copy(), requires_grad=True, dtype=np.float64)
        with Tape() as tape:
            total, _ = perceptual_loss(ext64, Tensor(content, dtype=np.float64), style, t_out, weights)
        tape.backward(total)

        def f(arr):
            loss, _ = perceptual_loss(
                ext64, Tensor(content, dtype=np.float64), style,
                Tensor(arr, dtype=np.float64), weights,
            )
            return loss.item()

        numeric = oracles.finite_difference_grad(f, output)
        assert oracles.relative_error(t_out.grad, numeric) < 1e-4


class TestRescale:
    def test_long_side_and_divisibility(self):
        img = Tensor(np.random.default_rng(21).uniform(0, 1, (1, 3, 96, 48)).astype(np.float32))
        out = rescale_long_side(img, 64)
        assert out.dims[2] == 64
        assert out.dims[2] % 8 == 0 and out.dims[3] % 8 == 0
        assert out.dims[3] == 32

    def test_noop_when_already_target(self):
        img = Tensor(np.random.default_rng(22).uniform(0, 1, (1, 3, 64, 32)).astype(np.float32))
        out = rescale_long_side(img, 64)
        assert out.data.tobytes() == img.data.tobytes()
