import math

import numpy as np
import pytest
import torch

from mvbigan.core import LatentGaussian, SubsetMask, ViewSet
from mvbigan.errors import InvalidConfig, ShapeMismatch
from mvbigan.networks import (
    ArchConfig,
    ModelBundle,
    PriorSpec,
    aggregate,
    discriminate_pair,
    discriminate_view_pair,
    encode_target,
    encode_views,
    generate,
    init_model,
    nelu,
    sample_latent,
)


def random_viewset(arch, rng, mask=None) -> ViewSet:
    bits = mask if mask is not None else rng.integers(0, 2, arch.num_views)
    return ViewSet(
        SubsetMask(bits),
        tuple(rng.random(nk).astype(np.float32) for nk in arch.view_sizes),
    )


def params_vector(model) -> np.ndarray:
    return np.concatenate([p.detach().numpy().ravel() for p in model.parameters()])


class TestNelu:
    def test_identity_below_zero(self):
        x = torch.tensor([-3.0, -0.5], dtype=torch.float64)
        np.testing.assert_allclose(nelu(x).numpy(), x.numpy())

    def test_saturating_above_zero(self):
        x = torch.tensor([0.0, 1.0, 50.0], dtype=torch.float64)
        np.testing.assert_allclose(
            nelu(x).numpy(), [0.0, 1.0 - math.exp(-1.0), 1.0], atol=1e-12
        )

    def test_bounded_above_by_one(self):
        x = torch.linspace(-5, 40, 300, dtype=torch.float64)
        assert float(nelu(x).max()) < 1.0 + 1e-12


class TestInitModel:
    def test_deterministic(self, tiny_arch):
        a = params_vector(init_model(tiny_arch, seed=9))
        b = params_vector(init_model(tiny_arch, seed=9))
        assert np.array_equal(a, b)

    def test_seed_sensitivity(self, tiny_arch):
        a = params_vector(init_model(tiny_arch, seed=1))
        b = params_vector(init_model(tiny_arch, seed=2))
        assert not np.array_equal(a, b)

    def test_zero_hidden_rejected(self, tiny_arch):
        import dataclasses

        bad = dataclasses.replace(tiny_arch, gen_hidden=0)
        with pytest.raises(InvalidConfig):
            init_model(bad, seed=0)

    def test_biases_zero_weights_fan_in_bounded(self, tiny_model):
        for name, p in tiny_model.named_parameters():
            arr = p.detach().numpy()
            if p.dim() == 1:
                assert not arr.any(), name
            else:
                bound = 1.0 / math.sqrt(int(np.prod(p.shape[1:])))
                assert np.abs(arr).max() <= bound, name

    def test_independent_embeddings_for_h_and_d2(self, tiny_model):
        h_phi = params_vector(tiny_model.H.agg)
        d2_phi = params_vector(tiny_model.D2.agg)
        assert h_phi.shape == d2_phi.shape
        assert not np.array_equal(h_phi, d2_phi)


class TestEncodeTarget:
    def test_mu_in_open_unit_interval(self, tiny_model, tiny_arch):
        rng = np.random.default_rng(0)
        y = rng.random(tiny_arch.output_size).astype(np.float32)
        g = encode_target(tiny_model, y)
        mu = g.mu.detach().numpy()
        assert (mu > -1).all() and (mu < 1).all()

    def test_log_var_cap_gives_sigma_sq_below_e(self, tiny_model, tiny_arch):
        g = encode_target(tiny_model, np.zeros(tiny_arch.output_size, np.float32))
        var = np.exp(g.log_var.detach().numpy())
        assert (var < math.e).all()

    def test_batched_order_preserving(self, tiny_model, tiny_arch):
        rng = np.random.default_rng(1)
        ys = rng.random((5, tiny_arch.output_size)).astype(np.float32)
        batch = encode_target(tiny_model, ys)
        assert tuple(batch.mu.shape) == (5, tiny_arch.latent_dim)
        for i in range(5):
            single = encode_target(tiny_model, ys[i])
            np.testing.assert_allclose(
                batch.mu.detach().numpy()[i],
                single.mu.detach().numpy(),
                rtol=1e-5, atol=1e-7,
            )

    def test_shape_mismatch(self, tiny_model):
        with pytest.raises(ShapeMismatch):
            encode_target(tiny_model, np.zeros(5, np.float32))


class TestGenerate:
    def test_deterministic_and_in_range(self, tiny_model, tiny_arch):
        z = np.zeros(tiny_arch.latent_dim, np.float32)
        a = generate(tiny_model, z).detach().numpy()
        b = generate(tiny_model, z).detach().numpy()
        assert np.array_equal(a, b)
        assert a.shape == (tiny_arch.output_size,)
        assert (a > 0).all() and (a < 1).all()

    def test_distinct_latents_distinct_outputs(self, tiny_model, tiny_arch):
        rng = np.random.default_rng(2)
        z1 = rng.standard_normal(tiny_arch.latent_dim).astype(np.float32)
        z2 = rng.standard_normal(tiny_arch.latent_dim).astype(np.float32)
        a = generate(tiny_model, z1).detach().numpy()
        b = generate(tiny_model, z2).detach().numpy()
        assert not np.allclose(a, b)

    def test_digit_config_output_size(self):
        model = init_model(ArchConfig(agg_dim=32, gen_hidden=32, enc_hidden=32,
                                      disc_hidden=32), seed=0)
        out = generate(model, np.zeros(128, np.float32))
        assert out.shape == (784,)

    def test_bad_latent_shape(self, tiny_model):
        with pytest.raises(ShapeMismatch):
            generate(tiny_model, np.zeros(3, np.float32))


class TestAggregate:
    def test_empty_mask_gives_zero(self, tiny_model, tiny_arch):
        rng = np.random.default_rng(3)
        vs = random_viewset(tiny_arch, rng, mask=np.zeros(3, np.int8))
        out = aggregate(tiny_model.H.agg, vs).detach().numpy()
        assert out.shape == (tiny_arch.agg_dim,)
        assert not out.any()

    def test_masked_view_cannot_leak(self, tiny_model, tiny_arch):
        rng = np.random.default_rng(4)
        vs = random_viewset(tiny_arch, rng, mask=np.array([1, 0, 1]))
        base = aggregate(tiny_model.H.agg, vs).detach().numpy()
        views = list(vs.views)
        views[1] = rng.random(views[1].size).astype(np.float32) * 100
        perturbed = ViewSet(vs.mask, tuple(views))
        out = aggregate(tiny_model.H.agg, perturbed).detach().numpy()
        assert np.array_equal(base, out)

    def test_identity_embeddings_sum_views(self):
        arch = ArchConfig(
            latent_dim=2, output_size=4, view_sizes=(3, 3), agg_dim=3,
            gen_hidden=4, enc_hidden=4, disc_hidden=4,
        )
        model = init_model(arch, seed=0)
        with torch.no_grad():
            for phi in model.H.agg.embed:
                phi.weight.copy_(torch.eye(3))
        vs = ViewSet(
            SubsetMask((1, 1)),
            (np.array([1.0, 2.0, 3.0], np.float32), np.array([10.0, 20.0, 30.0], np.float32)),
        )
        out = aggregate(model.H.agg, vs).detach().numpy()
        np.testing.assert_allclose(out, [11.0, 22.0, 33.0], rtol=1e-6)


class TestEncodeViews:
    def test_empty_mask_is_valid_input(self, tiny_model, tiny_arch):
        rng = np.random.default_rng(5)
        vs = random_viewset(tiny_arch, rng, mask=np.zeros(3, np.int8))
        g = encode_views(tiny_model, vs)
        assert tuple(g.mu.shape) == (tiny_arch.latent_dim,)

    def test_batched_order_preserving(self, tiny_model, tiny_arch):
        rng = np.random.default_rng(6)
        sets = [random_viewset(tiny_arch, rng) for _ in range(4)]
        batch = encode_views(tiny_model, sets)
        assert tuple(batch.mu.shape) == (4, tiny_arch.latent_dim)
        for i, vs in enumerate(sets):
            single = encode_views(tiny_model, vs)
            np.testing.assert_allclose(
                batch.mu.detach().numpy()[i], single.mu.detach().numpy(),
                rtol=1e-5, atol=1e-7,
            )

    def test_eval_mode_deterministic(self, tiny_model, tiny_arch):
        rng = np.random.default_rng(7)
        vs = random_viewset(tiny_arch, rng)
        g1 = encode_views(tiny_model, vs)
        g2 = encode_views(tiny_model, vs)
        assert np.array_equal(g1.mu.detach().numpy(), g2.mu.detach().numpy())
        assert np.array_equal(g1.log_var.detach().numpy(), g2.log_var.detach().numpy())


class TestDiscriminators:
    def test_pair_score_in_unit_interval(self, tiny_model, tiny_arch):
        rng = np.random.default_rng(8)
        y = rng.random(tiny_arch.output_size).astype(np.float32)
        z = rng.standard_normal(tiny_arch.latent_dim).astype(np.float32)
        s = float(discriminate_pair(tiny_model, y, z))
        assert 0.0 < s < 1.0

    def test_pair_batched_and_reproducible(self, tiny_model, tiny_arch):
        rng = np.random.default_rng(9)
        ys = rng.random((6, tiny_arch.output_size)).astype(np.float32)
        zs = rng.standard_normal((6, tiny_arch.latent_dim)).astype(np.float32)
        s1 = discriminate_pair(tiny_model, ys, zs).detach().numpy()
        s2 = discriminate_pair(tiny_model, ys, zs).detach().numpy()
        assert s1.shape == (6,)
        assert np.array_equal(s1, s2)

    def test_view_pair_masking_invariance(self, tiny_model, tiny_arch):
        rng = np.random.default_rng(10)
        vs = random_viewset(tiny_arch, rng, mask=np.array([0, 1, 0]))
        z = rng.standard_normal(tiny_arch.latent_dim).astype(np.float32)
        base = float(discriminate_view_pair(tiny_model, vs, z))
        views = list(vs.views)
        views[0] = rng.random(views[0].size).astype(np.float32)
        views[2] = rng.random(views[2].size).astype(np.float32)
        out = float(discriminate_view_pair(tiny_model, ViewSet(vs.mask, tuple(views)), z))
        assert base == out
        assert 0.0 < base < 1.0

    def test_view_pair_batch_pairing(self, tiny_model, tiny_arch):
        rng = np.random.default_rng(11)
        sets = [random_viewset(tiny_arch, rng) for _ in range(3)]
        zs = rng.standard_normal((3, tiny_arch.latent_dim)).astype(np.float32)
        batch = discriminate_view_pair(tiny_model, sets, zs).detach().numpy()
        for i in range(3):
            single = float(discriminate_view_pair(tiny_model, sets[i], zs[i]))
            assert batch[i] == pytest.approx(single, rel=1e-5)

    def test_batch_size_mismatch(self, tiny_model, tiny_arch):
        rng = np.random.default_rng(12)
        ys = rng.random((2, tiny_arch.output_size)).astype(np.float32)
        zs = rng.standard_normal((3, tiny_arch.latent_dim)).astype(np.float32)
        with pytest.raises(ShapeMismatch):
            discriminate_pair(tiny_model, ys, zs)


class TestSampleLatent:
    def test_zero_noise_recovers_mean(self):
        g = LatentGaussian(np.array([0.3, -0.4]), np.array([0.7, -0.1]))
        out = sample_latent(g, np.zeros(2))
        np.testing.assert_allclose(out.numpy(), g.mu)

    def test_unit_sigma_adds_noise(self):
        g = LatentGaussian(np.array([1.0, 2.0]), np.zeros(2))
        out = sample_latent(g, np.array([0.5, -0.5]))
        np.testing.assert_allclose(out.numpy(), [1.5, 1.5])

    def test_monte_carlo_variance(self):
        rng = np.random.default_rng(13)
        log_var = np.array([0.4, -0.8, 0.0])
        g = LatentGaussian(np.zeros((100_000, 3)) + 1.0,
                           np.broadcast_to(log_var, (100_000, 3)).copy())
        noise = rng.standard_normal((100_000, 3))
        samples = sample_latent(g, noise).numpy()
        ratio = samples.var(axis=0) / np.exp(log_var)
        assert (np.abs(ratio - 1) < 0.05).all()

    def test_shape_mismatch(self):
        g = LatentGaussian(np.zeros(3), np.zeros(3))
        with pytest.raises(ShapeMismatch):
            sample_latent(g, np.zeros(4))


class TestPrior:
    def test_standard_normal_moments(self):
        prior = PriorSpec(16)
        rng = np.random.default_rng(14)
        z = prior.sample(rng, 50_000).numpy()
        assert abs(z.mean()) < 0.01
        assert abs(z.var() - 1.0) < 0.02


class TestMaskingInvarianceRandomized:
    def test_all_consumers_invariant(self, tiny_model, tiny_arch):
        rng = np.random.default_rng(15)
        for _ in range(50):
            bits = rng.integers(0, 2, tiny_arch.num_views)
            if bits.all():
                bits[rng.integers(tiny_arch.num_views)] = 0
            vs = random_viewset(tiny_arch, rng, mask=bits)
            hidden = np.flatnonzero(bits == 0)
            views = list(vs.views)
            k = int(rng.choice(hidden))
            views[k] = rng.random(views[k].size).astype(np.float32) * 10
            vs2 = ViewSet(vs.mask, tuple(views))
            z = rng.standard_normal(tiny_arch.latent_dim).astype(np.float32)

            a1 = aggregate(tiny_model.H.agg, vs).detach().numpy()
            a2 = aggregate(tiny_model.H.agg, vs2).detach().numpy()
            assert np.array_equal(a1, a2)
            e1 = encode_views(tiny_model, vs)
            e2 = encode_views(tiny_model, vs2)
            assert np.array_equal(e1.mu.detach().numpy(), e2.mu.detach().numpy())
            d1 = float(discriminate_view_pair(tiny_model, vs, z))
            d2 = float(discriminate_view_pair(tiny_model, vs2, z))
            assert d1 == d2


@pytest.fixture(scope="module")
def conv_model():
    arch = ArchConfig(
        latent_dim=16,
        output_size=3 * 64 * 64,
        view_sizes=(40, 3 * 64 * 64),
        agg_dim=32,
        gen_hidden=24,
        enc_hidden=24,
        disc_hidden=24,
        gen_output="tanh",
        conv_mode=True,
        conv_view_kinds=("vector", "image"),
    )
    return init_model(arch, seed=0)


class TestConvConfig:
    def test_image_to_latent_path(self, conv_model):
        rng = np.random.default_rng(16)
        vs = ViewSet(
            SubsetMask((1, 1)),
            (
                rng.random(40).astype(np.float32),
                rng.random(3 * 64 * 64).astype(np.float32),
            ),
        )
        g = encode_views(conv_model, vs)
        assert tuple(g.mu.shape) == (16,)
        y = rng.random(3 * 64 * 64).astype(np.float32)
        ge = encode_target(conv_model, y)
        assert tuple(ge.mu.shape) == (16,)

    def test_latent_to_image_path(self, conv_model):
        out = generate(conv_model, np.zeros(16, np.float32))
        assert out.shape == (3 * 64 * 64,)
        arr = out.detach().numpy()
        assert (arr > -1).all() and (arr < 1).all()

    def test_discriminators_emit_probabilities(self, conv_model):
        rng = np.random.default_rng(17)
        y = rng.random(3 * 64 * 64).astype(np.float32)
        z = rng.standard_normal(16).astype(np.float32)
        s1 = float(discriminate_pair(conv_model, y, z))
        vs = ViewSet(
            SubsetMask((1, 0)),
            (rng.random(40).astype(np.float32), np.zeros(3 * 64 * 64, np.float32)),
        )
        s2 = float(discriminate_view_pair(conv_model, vs, z))
        assert 0.0 < s1 < 1.0 and 0.0 < s2 < 1.0

    def test_conv_config_validation(self):
        with pytest.raises(InvalidConfig):
            ArchConfig(conv_mode=True, view_sizes=(10,), output_size=100,
                       conv_view_kinds=("image",)).validate()
