"""Finite synthetic bandit generators with known ground truth.

Used for bias oracles and verification: every population quantity (mean
rewards, conditional means, relevance, maximal weight) is computable by
exhaustive enumeration over the finite context set.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import FeatureSchema, LoggedDataset


@dataclass(frozen=True)
class FiniteContextGenerator:
    """Contexts with arrival probabilities, a logging policy table and
    per-(context, action) expected rewards; realized rewards are Bernoulli."""

    schema: FeatureSchema
    contexts: np.ndarray        # (C, d)
    context_probs: np.ndarray   # (C,)
    p0: np.ndarray              # (C, k) logging policy
    rbar: np.ndarray            # (C, k) expected rewards in [0, 1]

    def __post_init__(self):
        if not np.isclose(self.context_probs.sum(), 1.0):
            raise ValueError("context probabilities must sum to 1")
        if np.any(self.p0 <= 0):
            raise ValueError("logging policy must have common support")
        if not np.allclose(self.p0.sum(axis=1), 1.0):
            raise ValueError("logging policy rows must sum to 1")

    @property
    def k(self) -> int:
        return self.p0.shape[1]

    @property
    def d(self) -> int:
        return self.contexts.shape[1]

    def sample(self, n: int, rng: np.random.Generator) -> LoggedDataset:
        c_idx = rng.choice(len(self.context_probs), size=n, p=self.context_probs)
        cum = np.cumsum(self.p0[c_idx], axis=1)
        actions = 1 + (rng.random(n)[:, None] >= cum).sum(axis=1)
        actions = np.minimum(actions, self.k).astype(int)
        props = self.p0[c_idx, actions - 1]
        rewards = (rng.random(n) < self.rbar[c_idx, actions - 1]).astype(float)
        return LoggedDataset(self.schema, self.k, self.contexts[c_idx],
                             actions, rewards, propensities=props,
                             propensity_source="true")

    def true_mean_reward(self, a: int) -> float:
        return float((self.context_probs * self.rbar[:, a - 1]).sum())

    def true_conditional_mean(self, a: int, i: int, value: float) -> float:
        mask = self.contexts[:, i] == value
        p = self.context_probs[mask].sum()
        if p == 0:
            raise ValueError("value never arrives")
        return float((self.context_probs[mask] * self.rbar[mask, a - 1]).sum() / p)

    def true_relevance(self, a: int, i: int, loss: str = "abs") -> float:
        """Population relevance of feature type i for action a, by enumeration."""
        marginal = self.true_mean_reward(a)
        total = 0.0
        for value in np.unique(self.contexts[:, i]):
            mask = self.contexts[:, i] == value
            p = float(self.context_probs[mask].sum())
            cond = float(
                (self.context_probs[mask] * self.rbar[mask, a - 1]).sum() / p)
            dev = cond - marginal
            total += p * (abs(dev) if loss == "abs" else dev ** 2)
        return total

    def max_weight(self) -> float:
        return float((1.0 / self.p0).max())
