import numpy as np
import pytest

from cfpolicy.datasets import FeatureSchema
from cfpolicy.synthetic import FiniteContextGenerator


@pytest.fixture
def kidney_stone():
    """Two-treatment success data with a stratum-confounded assignment.

    Stratum 0 (small) vs 1 (large); action 1 (open surgery) vs 2.
    Counts: open 81/87 small, 192/263 large; alternative 234/270 small,
    55/80 large. Propensities are the stratum assignment frequencies.
    """
    from cfpolicy.datasets import LoggedDataset

    counts = {(0, 1): (81, 87), (1, 1): (192, 263),
              (0, 2): (234, 270), (1, 2): (55, 80)}
    stratum_total = {0: 87 + 270, 1: 263 + 80}
    xs, acts, rews, props = [], [], [], []
    for (s, a), (succ, tot) in sorted(counts.items()):
        p0 = tot / stratum_total[s]
        for j in range(tot):
            xs.append([s])
            acts.append(a)
            rews.append(1.0 if j < succ else 0.0)
            props.append(p0)
    schema = FeatureSchema.categorical([2])
    return LoggedDataset(schema, 2, np.asarray(xs, dtype=float),
                         np.asarray(acts), np.asarray(rews),
                         np.asarray(props), "true")


def two_feature_generator():
    """d=2 categorical generator (b=2 and b=3) with k=2, biased logging and
    reward means that depend on feature 0 only."""
    contexts = []
    for v0 in range(2):
        for v1 in range(3):
            contexts.append([v0, v1])
    contexts = np.asarray(contexts, dtype=float)
    # independent marginals so feature 1 carries no reward signal at all
    probs = np.outer([0.3, 0.7], [1 / 3, 1 / 2, 1 / 6]).ravel()
    p0 = np.zeros((6, 2))
    p0[:, 0] = np.where(contexts[:, 0] == 0, 0.7, 0.35)
    p0[:, 1] = 1.0 - p0[:, 0]
    rbar = np.zeros((6, 2))
    rbar[:, 0] = np.where(contexts[:, 0] == 0, 0.8, 0.3)
    rbar[:, 1] = np.where(contexts[:, 0] == 0, 0.4, 0.6)
    schema = FeatureSchema.categorical([2, 3])
    return FiniteContextGenerator(schema, contexts, probs, p0, rbar)


@pytest.fixture
def finite_generator():
    return two_feature_generator()


def benchmark_scale_corpus(n=7494, d=16, k=10, std=0.08, flip=0.3, seed=7):
    """10-class corpus shaped like a 16-feature digit benchmark: per class a
    primary Gaussian blob plus a rarer antipodal one, so a linear policy tops
    out well below a nonlinear one."""
    from cfpolicy.datasets import SupervisedDataset

    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.15, 0.85, (k, d))
    labels = np.arange(n) % k + 1
    rng.shuffle(labels)
    reflected = rng.random(n) < flip
    base = centers[labels - 1]
    base = np.where(reflected[:, None], 1.0 - base, base)
    feats = np.clip(base + rng.normal(0.0, std, (n, d)), 0.0, 1.0)
    return SupervisedDataset(FeatureSchema.continuous(d), k, feats, labels)
