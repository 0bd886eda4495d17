import numpy as np
import pytest

from conftest import make_toy_dataset
from mvbigan.core import SubsetMask, ViewSet
from mvbigan.data import SyntheticSpec, TaskSpec, build_quarters_dataset, sample_synthetic
from mvbigan.errors import ShapeMismatch, TooFewSamples
from mvbigan.evaluation import (
    input_canvas,
    quarter_canvas,
    read_pgm,
    render_grid,
    sample_conditional,
    synthetic_analytic,
    synthetic_report,
    to_gray,
    variance_metric,
    variance_profile,
    write_pgm,
    write_report,
)
from mvbigan.networks import init_model
from mvbigan.training import default_arch_for_task


@pytest.fixture()
def synthetic_model():
    return init_model(default_arch_for_task(TaskSpec.synthetic()), seed=21)


class TestSampleConditional:
    def test_zero_noise_gives_modal_output(self, tiny_model, tiny_arch):
        rng = np.random.default_rng(0)
        vs = ViewSet(
            SubsetMask((1, 1, 0)),
            tuple(rng.random(nk).astype(np.float32) for nk in tiny_arch.view_sizes),
        )
        from mvbigan.networks import encode_views, generate

        samples = sample_conditional(tiny_model, vs, 3, None, zero_noise=True)
        g = encode_views(tiny_model, vs)
        modal = generate(tiny_model, g.mu).detach().numpy()
        assert samples.shape == (3, tiny_arch.output_size)
        for row in samples:
            np.testing.assert_array_equal(row, modal)

    def test_fixed_seed_reproducible(self, tiny_model, tiny_arch):
        rng = np.random.default_rng(5)
        vs = ViewSet(
            SubsetMask((1, 0, 1)),
            tuple(rng.random(nk).astype(np.float32) for nk in tiny_arch.view_sizes),
        )
        a = sample_conditional(tiny_model, vs, 4, np.random.default_rng(9))
        b = sample_conditional(tiny_model, vs, 4, np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)

    def test_outputs_in_generator_range(self, tiny_model, tiny_arch):
        rng = np.random.default_rng(6)
        vs = ViewSet(
            SubsetMask((1, 1, 1)),
            tuple(rng.random(nk).astype(np.float32) for nk in tiny_arch.view_sizes),
        )
        samples = sample_conditional(tiny_model, vs, 8, rng)
        assert (samples > 0).all() and (samples < 1).all()


class TestVarianceMetric:
    def test_identical_samples(self):
        assert variance_metric(np.ones((5, 7))) == 0.0

    def test_binary_pair(self):
        samples = np.stack([np.zeros(6), np.ones(6)])
        assert variance_metric(samples) == pytest.approx(0.25, abs=1e-12)

    def test_matches_two_pass_reference(self):
        rng = np.random.default_rng(7)
        samples = rng.random((32, 50))
        # independent two-pass reference: explicit mean, then squared deviations
        mean = samples.sum(axis=0) / len(samples)
        ref = float(((samples - mean) ** 2).sum(axis=0).mean() / len(samples))
        assert variance_metric(samples) == pytest.approx(ref, abs=1e-10)

    def test_too_few_samples(self):
        with pytest.raises(TooFewSamples):
            variance_metric(np.ones((1, 4)))

    def test_translation_invariant(self):
        rng = np.random.default_rng(8)
        samples = rng.random((16, 9))
        shifted = samples + 3.7
        assert variance_metric(shifted) == pytest.approx(
            variance_metric(samples), rel=1e-9
        )

    def test_quadratic_scaling(self):
        rng = np.random.default_rng(9)
        samples = rng.random((16, 9))
        assert variance_metric(2.5 * samples) == pytest.approx(
            6.25 * variance_metric(samples), rel=1e-9
        )


class TestVarianceProfile:
    def test_untrained_profile_is_finite_and_shaped(self, tiny_model, tiny_task):
        dataset = make_toy_dataset(tiny_task, n_items=6, seed=1)
        profile = variance_profile(tiny_model, dataset, seq_len=3, num_samples=4,
                                   seed=0)
        assert profile.step_mean_variance.shape == (3,)
        assert np.isfinite(profile.step_mean_variance).all()
        assert profile.item_variances.shape == (6, 3)
        assert 0.0 <= profile.fraction_monotone <= 1.0
        assert (profile.item_variances >= 0).all()

    def test_item_order_independent_of_evaluation(self, tiny_model, tiny_task):
        dataset = make_toy_dataset(tiny_task, n_items=5, seed=2)
        p1 = variance_profile(tiny_model, dataset, 2, num_samples=4, seed=3)
        p2 = variance_profile(tiny_model, dataset, 2, num_samples=4, seed=3,
                              max_items=3)
        np.testing.assert_array_equal(p1.item_variances[:3], p2.item_variances)

    def test_minimum_two_samples_accepted(self, tiny_model, tiny_task):
        dataset = make_toy_dataset(tiny_task, n_items=2, seed=3)
        profile = variance_profile(tiny_model, dataset, 2, num_samples=2, seed=0)
        assert profile.item_variances.shape == (2, 2)


class TestPgm:
    def test_grid_dimensions(self, tmp_path):
        rng = np.random.default_rng(10)
        inputs = [rng.random((28, 28)) for _ in range(3)]
        rows = [[rng.random((28, 28)) for _ in range(8)] for _ in range(3)]
        path = tmp_path / "grid.pgm"
        canvas = render_grid(inputs, rows, path)
        assert canvas.shape == (3 * 28, 9 * 28)
        img = read_pgm(path)
        assert img.shape == (3 * 28, 9 * 28)

    def test_mid_gray_rounds_half_up(self, tmp_path):
        path = tmp_path / "gray.pgm"
        write_pgm(path, np.full((4, 4), 0.5))
        img = read_pgm(path)
        assert (img == 128).all()

    def test_pixel_exact_round_trip(self, tmp_path):
        rng = np.random.default_rng(11)
        image = rng.random((17, 5))
        path = tmp_path / "rt.pgm"
        write_pgm(path, image)
        np.testing.assert_array_equal(read_pgm(path), to_gray(image))

    def test_mismatched_rows_rejected(self, tmp_path):
        with pytest.raises(ShapeMismatch):
            render_grid([np.ones((2, 2))], [], tmp_path / "x.pgm")


class TestInputCanvas:
    def test_quarter_canvas_places_views(self):
        rng = np.random.default_rng(12)
        imgs = rng.random((1, 28, 28)).astype(np.float32)
        ds = build_quarters_dataset(imgs)
        vs = ds.viewset(0, (1, 0, 0, 0))
        canvas = quarter_canvas(vs)
        np.testing.assert_array_equal(canvas[:14, :14], imgs[0, :14, :14])
        assert (canvas[14:, 14:] == 0.5).all()

    def test_hetero_attribute_only_is_blank(self):
        task = TaskSpec.hetero()
        vs = ViewSet(
            SubsetMask((1, 0)),
            (np.eye(10, dtype=np.float32)[3], np.zeros(784, np.float32)),
        )
        canvas = input_canvas(task, vs)
        assert (canvas == 0.5).all()


class TestSyntheticReport:
    def test_analytic_values(self):
        ana = synthetic_analytic(SyntheticSpec())
        cond = ana[(1, -1)]
        assert cond["two_view_mean"] == (1.0, -1.0)
        assert cond["two_view_var"] == pytest.approx((0.01, 0.01))
        assert cond["one_view_mean"] == (1.0, 0.0)
        assert cond["one_view_var"][0] == pytest.approx(0.01)
        assert cond["one_view_var"][1] == pytest.approx(1.01)

    def test_untrained_report_is_well_formed(self, synthetic_model, tmp_path):
        report = synthetic_report(synthetic_model, SyntheticSpec(), num_samples=16,
                                  seed=0)
        assert len(report["conditions"]) == 4
        for cond in report["conditions"]:
            assert len(cond["two_view_mean"]) == 2
            assert all(np.isfinite(cond["two_view_var"]))
        write_report(report, tmp_path / "r.txt", tmp_path / "r.json")
        text = (tmp_path / "r.txt").read_text()
        assert "two_view_mean" in text
        import json

        parsed = json.loads((tmp_path / "r.json").read_text())
        assert parsed["conditions"][0]["signs"] == report["conditions"][0]["signs"]

    def test_report_reproducible(self, synthetic_model):
        r1 = synthetic_report(synthetic_model, SyntheticSpec(), num_samples=8, seed=4)
        r2 = synthetic_report(synthetic_model, SyntheticSpec(), num_samples=8, seed=4)
        assert r1 == r2
