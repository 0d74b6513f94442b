import math

import numpy as np
import pytest

from cfpolicy.datasets import RewardTable
from cfpolicy.evaluation import EvalResult, accuracy, ci95, improvement_score


def one_hot_table(labels, k):
    n = len(labels)
    rewards = np.zeros((n, k))
    rewards[np.arange(n), np.asarray(labels) - 1] = 1.0
    return RewardTable(rewards)


class TestAccuracy:
    def test_perfect_deterministic_policy(self):
        labels = [1, 3, 2, 3]
        table = one_hot_table(labels, 3)
        probs = np.zeros((4, 3))
        probs[np.arange(4), np.asarray(labels) - 1] = 1.0
        assert accuracy(probs, table) == 1.0

    def test_uniform_policy_ten_actions(self):
        rng = np.random.default_rng(0)
        labels = rng.integers(1, 11, 50)
        table = one_hot_table(labels, 10)
        probs = np.full((50, 10), 0.1)
        assert accuracy(probs, table) == pytest.approx(0.1)

    def test_probability_weighted_mixture(self):
        table = RewardTable(np.array([[1.0, 0.0], [0.0, 1.0]]))
        probs = np.array([[0.7, 0.3], [0.4, 0.6]])
        assert accuracy(probs, table) == pytest.approx((0.7 + 0.6) / 2)

    def test_missing_table_rejected(self):
        with pytest.raises(ValueError, match="reward table"):
            accuracy(np.full((2, 2), 0.5), None)

    def test_shape_mismatch_rejected(self):
        table = one_hot_table([1, 2], 2)
        with pytest.raises(ValueError):
            accuracy(np.full((2, 3), 1 / 3), table)

    def test_bounded_for_binary_rewards(self):
        rng = np.random.default_rng(1)
        table = RewardTable((rng.random((30, 4)) < 0.3).astype(float))
        raw = rng.random((30, 4))
        probs = raw / raw.sum(axis=1, keepdims=True)
        assert 0.0 <= accuracy(probs, table) <= 1.0

    def test_uniform_policy_equals_mean_positive_fraction(self):
        rng = np.random.default_rng(2)
        k = 5
        table = RewardTable((rng.random((40, k)) < 0.4).astype(float))
        probs = np.full((40, k), 1.0 / k)
        expected = table.rewards.sum(axis=1).mean() / k
        assert accuracy(probs, table) == pytest.approx(expected)


class TestImprovementScore:
    def test_published_reference_pair(self):
        assert improvement_score(0.8801, 0.6898) == pytest.approx(0.6134,
                                                                  abs=1e-4)

    def test_equal_accuracies(self):
        assert improvement_score(0.42, 0.42) == 0.0

    def test_negative_when_worse(self):
        assert improvement_score(0.5, 0.75) == pytest.approx(-1.0)

    def test_perfect_baseline_rejected(self):
        with pytest.raises(ValueError):
            improvement_score(0.9, 1.0)

    def test_sign_flips_when_swapped(self):
        a, b = 0.6, 0.8
        assert improvement_score(a, b) < 0 < improvement_score(b, a)


class TestCi95:
    def test_constant_values(self):
        mean, half = ci95([0.7, 0.7, 0.7])
        assert mean == pytest.approx(0.7, abs=1e-15)
        assert half == pytest.approx(0.0, abs=1e-15)

    def test_alternating_values(self):
        vals = [0.0, 1.0] * 10
        mean, half = ci95(vals)
        assert mean == pytest.approx(0.5)
        expected = 1.96 * np.std(vals, ddof=1) / math.sqrt(len(vals))
        assert half == pytest.approx(expected)

    def test_matches_direct_formula_on_fixture(self):
        rng = np.random.default_rng(3)
        vals = rng.random(25)
        mean, half = ci95(vals)
        mu = sum(vals) / 25
        var = sum((v - mu) ** 2 for v in vals) / 24
        assert mean == pytest.approx(mu, abs=1e-12)
        assert half == pytest.approx(1.96 * math.sqrt(var / 25), abs=1e-12)

    def test_single_run_rejected(self):
        with pytest.raises(ValueError):
            ci95([0.5])


class TestEvalResult:
    def test_accuracy_range_enforced(self):
        with pytest.raises(ValueError):
            EvalResult("poem", 1.2, 0.01)

    def test_holds_improvements(self):
        res = EvalResult("ponn_b", 0.88, 0.015, {"poem": 0.61})
        assert res.improvement["poem"] == 0.61
