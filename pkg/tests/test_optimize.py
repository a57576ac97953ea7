import numpy as np
import pytest

from mixassist import synth
from mixassist.console import render_mix
from mixassist.errors import ValidationError
from mixassist.optimize import OptimizeConfig, optimize_params
from mixassist.params import denormalize, neutral_theta, theta_dim

FS = 44100


class TestOptimize:
    def test_init_at_optimum_returns_it(self, rng):
        tracks = [synth.random_test_signal(rng, 0.25) for _ in range(2)]
        theta_star = rng.uniform(0.1, 0.9, size=theta_dim(2))
        reference = render_mix(tracks, denormalize(theta_star, 2))
        theta, trace = optimize_params(
            tracks, reference,
            opt_config=OptimizeConfig(steps=40, init_theta=theta_star),
        )
        assert trace[0] < 1e-10
        np.testing.assert_allclose(theta, theta_star, atol=1e-6)

    def test_single_step_trace(self, rng):
        tracks = [synth.random_test_signal(rng, 0.25)]
        reference = synth.random_test_signal(rng, 0.25).to_stereo()
        _, trace = optimize_params(
            tracks, reference, opt_config=OptimizeConfig(steps=1)
        )
        assert len(trace) == 1

    def test_best_so_far_non_increasing(self, rng):
        tracks = [synth.random_test_signal(rng, 0.25) for _ in range(2)]
        reference = render_mix(
            [synth.random_test_signal(rng, 0.25) for _ in range(2)],
            denormalize(rng.uniform(0.2, 0.8, size=theta_dim(2)), 2),
        )
        theta, trace = optimize_params(
            tracks, reference, opt_config=OptimizeConfig(steps=30)
        )
        best = np.minimum.accumulate(trace)
        assert np.all(np.diff(best) <= 0.0)
        # returned theta achieves the best traced loss
        from mixassist.features import style_loss

        mix = render_mix(tracks, denormalize(theta, 2))
        assert style_loss(mix, reference) == pytest.approx(min(trace), abs=1e-12)

    def test_early_stop_at_optimum(self, rng):
        tracks = [synth.random_test_signal(rng, 0.25) for _ in range(2)]
        theta_star = rng.uniform(0.2, 0.8, size=theta_dim(2))
        reference = render_mix(tracks, denormalize(theta_star, 2))
        _, trace = optimize_params(
            tracks, reference,
            opt_config=OptimizeConfig(steps=500, init_theta=theta_star),
        )
        assert len(trace) <= 30  # stops right after the early-stop window

    def test_loss_decreases(self, rng):
        tracks = [synth.random_test_signal(rng, 0.3) for _ in range(2)]
        reference = render_mix(
            [synth.random_test_signal(rng, 0.3) for _ in range(2)],
            denormalize(rng.uniform(0.25, 0.75, size=theta_dim(2)), 2),
        )
        _, trace = optimize_params(
            tracks, reference, opt_config=OptimizeConfig(steps=60)
        )
        assert min(trace) < 0.7 * trace[0]

    def test_deterministic(self, rng):
        tracks = [synth.random_test_signal(rng, 0.25) for _ in range(2)]
        reference = synth.random_test_signal(rng, 0.25).to_stereo()
        a = optimize_params(tracks, reference, opt_config=OptimizeConfig(steps=10))
        b = optimize_params(tracks, reference, opt_config=OptimizeConfig(steps=10))
        np.testing.assert_array_equal(a[0], b[0])
        assert a[1] == b[1]

    def test_should_stop_cancels(self, rng):
        tracks = [synth.random_test_signal(rng, 0.25)]
        reference = synth.random_test_signal(rng, 0.25).to_stereo()
        calls = []

        def stop_after_three():
            calls.append(None)
            return len(calls) > 3

        _, trace = optimize_params(
            tracks, reference,
            opt_config=OptimizeConfig(steps=100),
            should_stop=stop_after_three,
        )
        assert len(trace) == 3

    def test_bad_config(self):
        with pytest.raises(ValidationError):
            OptimizeConfig(steps=0)

    def test_bad_init_shape(self, rng):
        tracks = [synth.random_test_signal(rng, 0.25)]
        reference = synth.random_test_signal(rng, 0.25).to_stereo()
        with pytest.raises(ValidationError):
            optimize_params(
                tracks, reference,
                opt_config=OptimizeConfig(steps=1, init_theta=np.zeros(5)),
            )

    def test_progress_callback(self, rng):
        tracks = [synth.random_test_signal(rng, 0.25)]
        reference = synth.random_test_signal(rng, 0.25).to_stereo()
        seen = []
        optimize_params(
            tracks, reference,
            opt_config=OptimizeConfig(steps=5),
            progress=lambda step, total, loss: seen.append((step, total)),
        )
        assert seen == [(i + 1, 5) for i in range(5)]
