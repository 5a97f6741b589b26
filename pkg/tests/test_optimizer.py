import numpy as np
import pytest

from app.core.exceptions import InternalError, NumericalError
from app.models.classifier import VesselClassifier
from app.models.head import cross_entropy
from app.services.optimizer import AdamState, adam_step
from tests.conftest import assert_grad_close, numeric_grad, tiny_config


def batch(rng, n=4, n_samples=1000):
    waveforms = rng.uniform(-0.5, 0.5, (n, n_samples))
    ctdsv = rng.standard_normal((n, 5))
    labels = np.arange(n) % 5
    return waveforms, ctdsv, labels


class TestAdamStep:
    def test_zero_gradient_leaves_parameters(self):
        params = {"frontend.mu": np.array([0.5, 1.0]), "head.fc.bias": np.array([0.1, -0.2, 0.3])}
        before = {k: v.copy() for k, v in params.items()}
        adam_step(params, {k: np.zeros_like(v) for k, v in params.items()}, AdamState(lr=0.1))
        for name in params:
            np.testing.assert_array_equal(params[name], before[name])

    def test_first_step_moves_by_lr_against_gradient_sign(self):
        params = {"w": np.array([1.0, 1.0, 1.0])}
        adam_step(params, {"w": np.array([3.0, -0.02, 1e-3])}, AdamState(lr=0.01))
        np.testing.assert_allclose(params["w"], [0.99, 1.01, 0.99], rtol=1e-6)

    def test_moments_accumulate(self):
        state = AdamState(lr=0.01)
        params = {"w": np.zeros(1)}
        adam_step(params, {"w": np.array([1.0])}, state)
        adam_step(params, {"w": np.array([1.0])}, state)
        assert state.step == 2
        np.testing.assert_allclose(state.m["w"], [0.19])
        np.testing.assert_allclose(state.v["w"], [1.0 - 0.999 ** 2])

    def test_clamp_runs_after_update(self):
        params = {"frontend.mu": np.array([0.05])}

        def clamp():
            np.clip(params["frontend.mu"], 0.1, 3.0, out=params["frontend.mu"])

        adam_step(params, {"frontend.mu": np.array([5.0])}, AdamState(lr=0.5), clamp=clamp)
        assert params["frontend.mu"][0] == 0.1

    def test_non_finite_gradient_names_group_and_changes_nothing(self):
        params = {"encoder.block0.weight": np.ones(3), "frontend.sigma": np.ones(2)}
        grads = {"encoder.block0.weight": np.ones(3), "frontend.sigma": np.array([1.0, np.nan])}
        state = AdamState()
        with pytest.raises(NumericalError, match="frontend"):
            adam_step(params, grads, state)
        np.testing.assert_array_equal(params["encoder.block0.weight"], 1.0)
        assert state.step == 0

    def test_missing_gradient(self):
        with pytest.raises(InternalError):
            adam_step({"w": np.ones(2)}, {}, AdamState())
        with pytest.raises(InternalError):
            adam_step({"w": np.ones(2)}, {"w": np.ones(3)}, AdamState())


class TestEndToEndGradients:
    """Every learnable parameter of the full model against central differences"""

    @pytest.mark.parametrize("pooling", ["attention", "max"])
    @pytest.mark.parametrize("use_ctdsv", [True, False])
    def test_loss_gradients(self, rng, unit_stats, pooling, use_ctdsv):
        config = tiny_config(encoder={"pooling": pooling}, head={"use_ctdsv": use_ctdsv})
        model = VesselClassifier.initialize(config, seed=3, ctdsv_stats=unit_stats)
        waveforms, ctdsv, labels = batch(rng, n=2)

        def loss():
            logits, _ = model.forward(waveforms, ctdsv, mode="train")
            return float(np.mean(cross_entropy(logits, labels)[0]))

        _, grads, _ = model.loss_and_grads(waveforms, ctdsv, labels)
        assert set(grads) == set(model.parameters())
        for name, value in model.parameters().items():
            assert_grad_close(grads[name], numeric_grad(loss, value, max_elements=12), rtol=1e-3, atol=1e-7)


class TestTrainingStep:
    def step(self, model, data, state):
        _, grads, _ = model.loss_and_grads(*data)
        adam_step(model.parameters(), grads, state, clamp=model.clamp_)

    def test_frontend_parameters_move(self, rng, run_config, unit_stats):
        model = VesselClassifier.initialize(run_config, seed=0, ctdsv_stats=unit_stats)
        before = {k: v.copy() for k, v in model.frontend.parameters().items()}
        self.step(model, batch(rng), AdamState(lr=1e-3))
        for name in ("mu", "sigma", "rho", "a"):
            assert not np.array_equal(before[name], model.frontend.parameters()[name])

    def test_zero_learning_rate_is_bitwise_identity(self, rng, run_config, unit_stats):
        model = VesselClassifier.initialize(run_config, seed=0, ctdsv_stats=unit_stats)
        before = {k: v.copy() for k, v in model.parameters().items()}
        self.step(model, batch(rng), AdamState(lr=0.0))
        for name, value in model.parameters().items():
            np.testing.assert_array_equal(value, before[name])

    def test_deterministic_given_seed(self, rng, run_config, unit_stats):
        data = batch(rng)
        models = []
        for _ in range(2):
            model = VesselClassifier.initialize(run_config, seed=11, ctdsv_stats=unit_stats)
            state = AdamState(lr=1e-3)
            for _ in range(3):
                self.step(model, data, state)
            models.append(model)
        for name, value in models[0].parameters().items():
            np.testing.assert_array_equal(value, models[1].parameters()[name])

    def test_thread_count_does_not_change_gradients(self, rng, unit_stats):
        data = batch(rng)
        results = []
        for threads in (1, 3):
            model = VesselClassifier.initialize(tiny_config(runtime={"threads": threads}), seed=5,
                                                ctdsv_stats=unit_stats)
            results.append(model.loss_and_grads(*data))
        assert results[0][0] == results[1][0]
        for name, grad in results[0][1].items():
            np.testing.assert_array_equal(grad, results[1][1][name])

    def test_loss_falls_on_a_repeated_batch(self, rng, run_config, unit_stats):
        model = VesselClassifier.initialize(run_config, seed=2, ctdsv_stats=unit_stats)
        data = batch(rng, n=5)
        state = AdamState(lr=5e-4)
        losses = []
        for _ in range(50):
            loss, grads, _ = model.loss_and_grads(*data)
            adam_step(model.parameters(), grads, state, clamp=model.clamp_)
            losses.append(loss)
        assert losses[-1] < losses[0]
        assert model.constraint_violations() == []
