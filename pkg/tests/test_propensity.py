import numpy as np
import pytest

from cfpolicy.datasets import FeatureSchema, LoggedDataset, convert_to_bandit
from cfpolicy.propensity import (FitError, PropensityModel, WeightCap, fit,
                                 importance_weight, importance_weights,
                                 log_likelihood_and_grad, predict,
                                 predict_matrix)


def logged(features, actions, k, propensities=None, source="absent"):
    n = len(actions)
    return LoggedDataset(FeatureSchema.continuous(features.shape[1]), k,
                         features, np.asarray(actions), np.zeros(n),
                         propensities, source)


class TestWeightCap:
    def test_requires_above_one(self):
        with pytest.raises(ValueError):
            WeightCap(1.0)

    def test_default_is_sqrt_n(self):
        assert WeightCap.default_for(400).m == 20.0


class TestPredict:
    def test_zero_coefficients_uniform(self):
        model = PropensityModel(np.zeros((4, 3)))
        np.testing.assert_allclose(predict(model, [0.2, 0.9, 0.5]), 0.25)

    def test_shift_invariance(self):
        rng = np.random.default_rng(0)
        beta = rng.normal(size=(3, 2))
        x = rng.random(2)
        base = predict(PropensityModel(beta), x)
        # adding a constant to every score leaves the softmax unchanged;
        # realize the shift by appending a shared feature
        shifted = predict(
            PropensityModel(np.hstack([beta, np.full((3, 1), 7.0)])),
            np.concatenate([x, [1.0]]))
        np.testing.assert_allclose(shifted, base, atol=1e-12)

    def test_two_class_log_odds(self):
        # score gap ln 3 puts 75/25 mass on the two actions
        beta = np.array([[np.log(3.0)], [0.0]])
        np.testing.assert_allclose(predict(PropensityModel(beta), [1.0]),
                                   [0.75, 0.25], atol=1e-12)

    def test_distribution_for_random_inputs(self):
        rng = np.random.default_rng(1)
        model = PropensityModel(rng.normal(size=(5, 4)) * 10)
        for _ in range(20):
            p = predict(model, rng.normal(size=4) * 5)
            assert p.min() > 0
            assert abs(p.sum() - 1.0) < 1e-9

    def test_predict_matrix_matches_predict(self):
        rng = np.random.default_rng(2)
        model = PropensityModel(rng.normal(size=(3, 4)))
        feats = rng.random((6, 4))
        mat = predict_matrix(model, feats)
        for j in range(6):
            np.testing.assert_allclose(mat[j], predict(model, feats[j]))

    def test_json_roundtrip(self):
        model = PropensityModel(np.array([[1.5, -2.0], [0.0, 0.0]]), "abc")
        back = PropensityModel.from_json(model.to_json())
        np.testing.assert_array_equal(back.beta, model.beta)
        assert back.trained_on == "abc"


class TestFit:
    def test_uniform_logging_near_uniform_predictions(self):
        rng = np.random.default_rng(3)
        n, k = 10_000, 4
        feats = rng.random((n, 1))
        acts = rng.integers(1, k + 1, n)
        model = fit(logged(feats, acts, k), l2=1e-3)
        probs = predict_matrix(model, feats)
        assert np.abs(probs - 1.0 / k).max() < 0.02

    def test_recovers_known_logging_policy(self):
        from cfpolicy.datasets import SupervisedDataset
        rng = np.random.default_rng(4)
        n = 10_000
        sup = SupervisedDataset(FeatureSchema.continuous(4), 3,
                                rng.random((n, 4)),
                                rng.integers(1, 4, n))
        conv = convert_to_bandit(sup, kappa=1.0, seed=11)
        ds = conv.dataset
        stripped = logged(ds.features, ds.actions, ds.k)
        model = fit(stripped, l2=1e-4)
        est = predict_matrix(model, ds.features)
        true = conv.logging_policy(ds.features)
        assert np.abs(est - true).mean() < 0.03

    def test_separable_data_stays_finite(self):
        feats = np.array([[0.0], [0.0], [1.0], [1.0]])
        model = fit(logged(feats, [1, 1, 2, 2], 2), l2=0.0, max_iters=200)
        assert np.all(np.isfinite(model.beta))

    def test_needs_k_records(self):
        with pytest.raises(ValueError):
            fit(logged(np.array([[0.5]]), [1], 3))

    def test_rejects_nonfinite_features(self):
        feats = np.array([[0.1], [np.inf]])
        with pytest.raises(ValueError):
            fit(logged(feats, [1, 2], 2))

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        feats = rng.random((200, 3))
        acts = rng.integers(1, 4, 200)
        a = fit(logged(feats, acts, 3))
        b = fit(logged(feats, acts, 3))
        np.testing.assert_array_equal(a.beta, b.beta)
        assert a.trained_on == b.trained_on

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            n, d, k = 12, 3, 3
            feats = rng.random((n, d))
            acts = rng.integers(1, k + 1, n)
            beta = rng.normal(size=(k, d)) * 0.5
            beta[-1] = 0.0
            _, grad = log_likelihood_and_grad(beta, feats, acts, l2=1e-3)
            eps = 1e-6
            for r in range(k - 1):
                for c in range(d):
                    bp, bm = beta.copy(), beta.copy()
                    bp[r, c] += eps
                    bm[r, c] -= eps
                    lp, _ = log_likelihood_and_grad(bp, feats, acts, 1e-3)
                    lm, _ = log_likelihood_and_grad(bm, feats, acts, 1e-3)
                    num = (lp - lm) / (2 * eps)
                    assert abs(grad[r, c] - num) <= 1e-5 * max(1.0, abs(num))

    def test_likelihood_nondecreasing_over_iteration_budgets(self):
        rng = np.random.default_rng(7)
        feats = rng.random((150, 2))
        acts = rng.integers(1, 3, 150)
        ds = logged(feats, acts, 2)
        lls = []
        for iters in (1, 3, 10, 50, 200):
            model = fit(ds, max_iters=iters)
            ll, _ = log_likelihood_and_grad(model.beta, feats, acts, 1e-4)
            lls.append(ll)
        assert all(b >= a - 1e-12 for a, b in zip(lls, lls[1:]))


class TestImportanceWeight:
    def test_cap_binds(self):
        assert importance_weight(0.001, WeightCap(10)) == 10

    def test_cap_slack(self):
        assert importance_weight(0.5, WeightCap(10)) == 2

    def test_no_cap(self):
        assert importance_weight(0.25) == 4

    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError, match="common support"):
            importance_weight(0.0)

    def test_bounded_by_cap_and_inverse(self):
        rng = np.random.default_rng(8)
        cap = WeightCap(5.0)
        for p in rng.uniform(1e-4, 1.0, 50):
            w = importance_weight(p, cap)
            assert w <= cap.m + 1e-12
            assert w <= 1.0 / p + 1e-12


class TestImportanceWeights:
    def test_true_propensities_preferred(self):
        feats = np.array([[0.1], [0.9]])
        ds = logged(feats, [1, 2], 2, np.array([0.5, 0.25]), "true")
        np.testing.assert_allclose(importance_weights(ds), [2.0, 4.0])

    def test_model_used_when_no_true_propensities(self):
        feats = np.array([[0.1], [0.9]])
        ds = logged(feats, [1, 2], 2)
        model = PropensityModel(np.zeros((2, 1)))
        np.testing.assert_allclose(importance_weights(ds, model), [2.0, 2.0])

    def test_capped_weights_never_larger(self):
        rng = np.random.default_rng(9)
        props = rng.uniform(0.01, 1.0, 30)
        ds = logged(rng.random((30, 1)), rng.integers(1, 3, 30), 2,
                    props, "true")
        raw = importance_weights(ds)
        capped = importance_weights(ds, cap=WeightCap(7.0))
        assert np.all(capped <= raw + 1e-12)
        assert np.all(capped <= 7.0 + 1e-12)

    def test_errors_without_either_source(self):
        ds = logged(np.array([[0.2]]), [1], 2)
        with pytest.raises(ValueError):
            importance_weights(ds)
