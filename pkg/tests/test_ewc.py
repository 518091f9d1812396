import numpy as np
import pytest

from eegcl import (
    EmptyInputError,
    FisherAnchor,
    ModelConfig,
    OnlineEwc,
    Params,
    ShapeError,
    build_model,
    fisher_diagonal,
    gradient,
    penalty,
)

from helpers import central_difference, tiny_trials


def tiny_model():
    return build_model(
        ModelConfig(architecture="mlp", n_channels=2, n_timepoints=4,
                    n_classes=2, hidden=(3,), seed=0)
    )


class TestFisherAnchor:
    def test_valid_construction(self):
        a = FisherAnchor(anchor=[1.0, 2.0], fisher=[0.5, 0.0], lam=3.0)
        assert a.anchor.dtype == np.float64
        assert a.lam == 3.0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            FisherAnchor(anchor=[1.0, 2.0], fisher=[0.5], lam=1.0)
        with pytest.raises(ShapeError):
            FisherAnchor(anchor=np.zeros((2, 2)), fisher=np.zeros((2, 2)), lam=1.0)

    def test_negative_fisher_rejected(self):
        with pytest.raises(ValueError):
            FisherAnchor(anchor=[0.0], fisher=[-1.0], lam=1.0)

    def test_non_finite_fisher_rejected(self):
        with pytest.raises(ValueError):
            FisherAnchor(anchor=[0.0], fisher=[np.inf], lam=1.0)

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValueError):
            FisherAnchor(anchor=[0.0], fisher=[1.0], lam=-0.5)


class TestPenalty:
    def test_zero_at_the_anchor(self):
        anchor = FisherAnchor(anchor=[1.0, -2.0], fisher=[3.0, 4.0], lam=5.0)
        scalar, grad = penalty(np.array([1.0, -2.0]), anchor)
        assert scalar == 0.0
        assert np.array_equal(grad, [0.0, 0.0])

    def test_zero_lambda_switches_it_off(self):
        anchor = FisherAnchor(anchor=[0.0, 0.0], fisher=[1.0, 1.0], lam=0.0)
        scalar, grad = penalty(np.array([5.0, -5.0]), anchor)
        assert scalar == 0.0
        assert np.array_equal(grad, [0.0, 0.0])

    def test_worked_example(self):
        # (lambda/2) * sum F (theta - anchor)^2 with unit fisher, lambda 2,
        # and displacement [1, -1]: scalar 2, gradient [2, -2]
        anchor = FisherAnchor(anchor=[0.0, 0.0], fisher=[1.0, 1.0], lam=2.0)
        scalar, grad = penalty(np.array([1.0, -1.0]), anchor)
        assert scalar == 2.0
        assert np.array_equal(grad, [2.0, -2.0])

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        anchor = FisherAnchor(
            anchor=rng.standard_normal(6), fisher=rng.random(6), lam=7.0
        )
        vec = rng.standard_normal(6)
        _, grad = penalty(vec, anchor)
        numeric = central_difference(lambda v: penalty(v, anchor)[0], vec)
        np.testing.assert_allclose(grad, numeric, rtol=0, atol=1e-6)

    def test_shape_mismatch_rejected(self):
        anchor = FisherAnchor(anchor=[0.0, 0.0], fisher=[1.0, 1.0], lam=1.0)
        with pytest.raises(ShapeError):
            penalty(np.zeros(3), anchor)


class TestFisherDiagonal:
    def test_single_sample_is_squared_gradient(self):
        model = tiny_model()
        params = model.init_params()
        trials = tiny_trials(np.random.default_rng(1), 1)
        fisher = fisher_diagonal(model, params, trials)
        x = trials[0].trial[None, :, :].astype(np.float64)
        g = gradient(model, params, x, [trials[0].class_label])
        np.testing.assert_allclose(fisher, g * g, rtol=0, atol=1e-15)

    def test_mean_of_per_sample_squares(self):
        model = tiny_model()
        params = model.init_params()
        trials = tiny_trials(np.random.default_rng(2), 5)
        fisher = fisher_diagonal(model, params, trials)
        acc = np.zeros(params.n_params)
        for t in trials:
            g = gradient(
                model, params, t.trial[None, :, :].astype(np.float64), [t.class_label]
            )
            acc += g * g
        np.testing.assert_allclose(fisher, acc / 5.0, rtol=0, atol=1e-10)

    def test_nonnegative_and_finite(self):
        model = tiny_model()
        params = model.init_params()
        fisher = fisher_diagonal(model, params, tiny_trials(np.random.default_rng(3), 8))
        assert np.all(fisher >= 0)
        assert np.all(np.isfinite(fisher))

    def test_saturated_model_has_negligible_fisher(self):
        # a model that predicts every sample's label with near-certainty has
        # near-zero gradients, hence near-zero importance everywhere
        model = tiny_model()
        params = model.init_params()
        params.view("b1")[:] = np.array([100.0, -100.0])
        trials = [
            t for t in tiny_trials(np.random.default_rng(4), 10) if t.class_label == 0
        ]
        fisher = fisher_diagonal(model, params, trials)
        assert float(np.max(fisher)) < 1e-8

    def test_empty_dataset_rejected(self):
        model = tiny_model()
        with pytest.raises(EmptyInputError):
            fisher_diagonal(model, model.init_params(), [])


class TestOnlineEwc:
    def test_starts_without_anchor_or_hook(self):
        ewc = OnlineEwc(lam=10.0)
        assert ewc.anchor is None
        assert ewc.penalty_hook() is None

    def test_update_sets_anchor_copy(self):
        model = tiny_model()
        params = model.init_params()
        ewc = OnlineEwc(lam=10.0)
        ewc.update(model, params, tiny_trials(np.random.default_rng(5), 4))
        anchor = ewc.anchor
        assert np.array_equal(anchor.anchor, params.vector)
        params.vector[0] += 99.0
        assert ewc.anchor.anchor[0] != params.vector[0]

    def test_fisher_accumulates_across_updates(self):
        model = tiny_model()
        params = model.init_params()
        set_a = tiny_trials(np.random.default_rng(6), 4)
        set_b = tiny_trials(np.random.default_rng(7), 4)
        f_a = fisher_diagonal(model, params, set_a)
        f_b = fisher_diagonal(model, params, set_b)
        ewc = OnlineEwc(lam=1.0)
        ewc.update(model, params, set_a)
        ewc.update(model, params, set_b)
        np.testing.assert_allclose(ewc.anchor.fisher, f_a + f_b, rtol=0, atol=1e-12)

    def test_reanchors_to_latest_params(self):
        model = tiny_model()
        first = model.init_params()
        ewc = OnlineEwc(lam=1.0)
        trials = tiny_trials(np.random.default_rng(8), 4)
        ewc.update(model, first, trials)
        second = first.copy()
        second.vector += 0.5
        ewc.update(model, second, trials)
        assert np.array_equal(ewc.anchor.anchor, second.vector)

    def test_hook_captures_state_at_creation(self):
        model = tiny_model()
        params = model.init_params()
        ewc = OnlineEwc(lam=2.0)
        ewc.update(model, params, tiny_trials(np.random.default_rng(9), 4))
        hook = ewc.penalty_hook()
        at_anchor_loss, at_anchor_grad = hook(params.vector)
        assert at_anchor_loss == 0.0
        assert np.all(at_anchor_grad == 0.0)
        shifted = params.vector + 1.0
        loss, _ = hook(shifted)
        assert loss > 0.0
        expected, _ = penalty(shifted, ewc.anchor)
        assert loss == expected

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValueError):
            OnlineEwc(lam=-1.0)
