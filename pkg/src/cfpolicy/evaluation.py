"""Policy evaluation against held-out full-reward tables."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .datasets import RewardTable


@dataclass(frozen=True)
class EvalResult:
    algorithm: str
    acc: float
    ci95_half_width: float
    improvement: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.acc <= 1.0:
            raise ValueError("accuracy must lie in [0, 1]")


def accuracy(policy_probs: np.ndarray, table: RewardTable) -> float:
    """Probability-weighted reward: mean over rows of sum_a h(a|x) * R(a)."""
    probs = np.asarray(policy_probs, dtype=float)
    if table is None:
        raise ValueError("hidden reward table required for evaluation")
    if probs.shape != table.rewards.shape:
        raise ValueError("policy probabilities do not match reward table shape")
    return float((probs * table.rewards).sum(axis=1).mean())


def improvement_score(acc_ours: float, acc_other: float) -> float:
    """Fraction of the other policy's remaining loss that ours eliminates."""
    if acc_other >= 1.0:
        raise ValueError("improvement undefined when the baseline is perfect")
    return (acc_ours - acc_other) / (1.0 - acc_other)


def ci95(values) -> tuple[float, float]:
    """(mean, 1.96 * sample std / sqrt(runs)) over repeated runs."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise ValueError("need at least two runs for a confidence interval")
    half = 1.96 * values.std(ddof=1) / math.sqrt(values.size)
    return float(values.mean()), float(half)
