"""Per-action feature relevance from importance-weighted reward estimates.

For each (action, feature type) pair we compare the conditional IPS reward
estimate per feature stratum against the marginal estimate, aggregate the
deviations with a Lipschitz loss, and keep the feature when the aggregate
exceeds a variance- and correlation-aware threshold. Continuous features are
handled by equal-width binning with ceil(n^(1/3)) bins.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .datasets import LoggedDataset, FeatureSchema

ABS = "abs"
SQUARED = "squared"

LAMBDA1_GRID = (0.005, 0.01, 0.03, 0.05, 0.1)
LAMBDA2_GRID = (0.0, 0.001, 0.005, 0.01)


def _loss(dev: np.ndarray, loss: str) -> np.ndarray:
    if loss == ABS:
        return np.abs(dev)
    if loss == SQUARED:
        return dev ** 2
    raise ValueError(f"unknown loss {loss!r}")


@dataclass(frozen=True)
class Binning:
    """Equal-width partition of [0, 1] into s bins; 1.0 falls in the last bin."""

    s: int

    def __post_init__(self):
        if self.s < 1:
            raise ValueError("need at least one bin")

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.s + 1)

    def assign(self, values: np.ndarray) -> np.ndarray:
        idx = np.floor(np.asarray(values, dtype=float) * self.s).astype(int)
        return np.clip(idx, 0, self.s - 1)


def make_bins(n: int) -> Binning:
    """Default bin count ceil(n^(1/3)) balancing bin width against counts."""
    return Binning(int(math.ceil(round(n ** (1.0 / 3.0), 9))))


def assign_bin(x_i: float, binning: Binning) -> int:
    return int(binning.assign(np.asarray([x_i]))[0])


def record_values(ds: LoggedDataset, weights: np.ndarray, a: int) -> np.ndarray:
    """Weighted reward terms w * 1{A=a} * r, one per record."""
    return weights * (ds.actions == a) * ds.rewards


def ips_mean(ds: LoggedDataset, a: int, weights: np.ndarray) -> float:
    """Importance-weighted mean reward of action a over the whole dataset."""
    if ds.n == 0:
        raise ValueError("empty dataset")
    return float(record_values(ds, weights, a).mean())


def stratum_labels(ds: LoggedDataset, i: int,
                   binning: Binning | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(labels, stratum values): per-record stratum index for feature type i."""
    col = ds.features[:, i]
    if ds.schema.is_continuous(i):
        if binning is None:
            binning = make_bins(ds.n)
        labels = binning.assign(col)
        values = np.arange(binning.s)
    else:
        values = np.unique(col)
        labels = np.searchsorted(values, col)
    return labels, values


def ips_conditional_mean(ds: LoggedDataset, a: int, i: int, value,
                         weights: np.ndarray,
                         binning: Binning | None = None) -> float:
    """Importance-weighted mean reward of action a within one stratum of
    feature type i. Empty strata are defined as 0."""
    col = ds.features[:, i]
    if ds.schema.is_continuous(i):
        if binning is None:
            binning = make_bins(ds.n)
        mask = binning.assign(col) == int(value)
    else:
        mask = col == value
    count = int(mask.sum())
    if count == 0:
        return 0.0
    return float(record_values(ds, weights, a)[mask].mean())


def sample_variances(ds: LoggedDataset, a: int, i: int, weights: np.ndarray,
                     binning: Binning | None = None):
    """(overall variance, count-weighted average stratum variance,
    per-stratum variances) of the weighted reward terms.

    Sample variances use the n-1 denominator; strata with fewer than two
    records contribute zero.
    """
    u = record_values(ds, weights, a)
    v_n = float(u.var(ddof=1)) if ds.n >= 2 else 0.0
    labels, values = stratum_labels(ds, i, binning)
    per = np.zeros(len(values))
    counts = np.zeros(len(values))
    for s_idx in range(len(values)):
        mask = labels == s_idx
        c = int(mask.sum())
        counts[s_idx] = c
        if c >= 2:
            per[s_idx] = float(u[mask].var(ddof=1))
    vbar = float((counts * per).sum() / ds.n)
    return v_n, vbar, per


def relevance_score(ds: LoggedDataset, a: int, i: int, weights: np.ndarray,
                    loss: str = ABS, binning: Binning | None = None) -> float:
    """Count-weighted loss between conditional and marginal IPS estimates."""
    u = record_values(ds, weights, a)
    overall = u.mean()
    labels, values = stratum_labels(ds, i, binning)
    total = 0.0
    for s_idx in range(len(values)):
        mask = labels == s_idx
        c = int(mask.sum())
        if c == 0:
            continue
        dev = u[mask].mean() - overall
        total += (c / ds.n) * float(_loss(np.asarray(dev), loss))
    return total


def pearson_avg_abs_corr(ds: LoggedDataset) -> np.ndarray:
    """Per feature type: mean absolute Pearson correlation with the others.

    Constant columns have their correlations defined as 0.
    """
    d = ds.schema.d
    if d < 2:
        raise ValueError("need at least two feature types")
    x = ds.features
    # exact constancy check: std of identical values can round to ~1e-17
    nonconst = np.any(x != x[0], axis=0)
    rho = np.zeros((d, d))
    if nonconst.sum() >= 2:
        sub = np.corrcoef(x[:, nonconst], rowvar=False)
        rho[np.ix_(nonconst, nonconst)] = sub
    np.fill_diagonal(rho, 0.0)
    return np.abs(rho).sum(axis=1) / (d - 1)


def selection_threshold(b_i: int, vbar: float, n: int, avg_abs_corr: float,
                        lambda1: float, lambda2: float,
                        mode: str = "categorical") -> float:
    """Variance term plus redundancy term.

    Categorical mode scales the variance term by sqrt(b_i/n); binned mode by
    n^(-1/3).
    """
    if lambda1 < 0 or lambda2 < 0:
        raise ValueError("threshold weights must be >= 0")
    if mode == "categorical":
        var_term = math.sqrt(b_i * vbar / n)
    elif mode == "binned":
        var_term = math.sqrt(vbar) / n ** (1.0 / 3.0)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return lambda1 * var_term + lambda2 * avg_abs_corr


def bernstein_bound(n: int, b_i: int, vbar: float, v_n: float, max_weight: float,
                    delta: float, B: float = 1.0, mode: str = "categorical",
                    m: float | None = None, L: float = 0.0) -> float:
    """Empirical-Bernstein deviation bound on the relevance estimate.

    Categorical mode evaluates the finite-alphabet bound; binned mode
    evaluates the computable part of the continuous-feature bound (the
    unobservable bias terms are excluded; `L` is the user-supplied Lipschitz
    constant and `m` the weight cap).
    """
    if not 0 < delta <= 1.0 / 3.0:
        raise ValueError("delta must lie in (0, 1/3]")
    if n < 2:
        raise ValueError("need n >= 2")
    ln3 = math.log(3.0 / delta)
    ln1 = math.log(1.0 / delta)
    if mode == "categorical":
        return (B * (math.sqrt(2.0 * b_i * ln3 * vbar / n)
                     + math.sqrt(2.0 * ln3 * v_n / n)
                     + max_weight * (b_i + 1) * ln3 / n)
                + math.sqrt(2.0 * (ln1 + b_i * math.log(2.0)) / n))
    if mode == "binned":
        if m is None:
            raise ValueError("binned mode requires the weight cap m")
        cube = n ** (1.0 / 3.0)
        return (B * (math.sqrt(4.0 * ln3) / cube
                     * (math.sqrt(vbar) + math.sqrt(v_n))
                     + L / cube)
                + (4.0 * m * B * ln3 + math.sqrt(2.0 * ln1 + math.log(2.0)))
                / cube ** 2)
    raise ValueError(f"unknown mode {mode!r}")


@dataclass(frozen=True)
class FeatureMasks:
    """Per-action binary feature masks, shape (k, d)."""

    masks: np.ndarray

    def __post_init__(self):
        if not np.all((self.masks == 0) | (self.masks == 1)):
            raise ValueError("masks must be binary")

    @property
    def k(self) -> int:
        return self.masks.shape[0]

    @property
    def d(self) -> int:
        return self.masks.shape[1]

    @classmethod
    def all_ones(cls, k: int, d: int) -> "FeatureMasks":
        return cls(np.ones((k, d)))

    def selected(self, a: int) -> np.ndarray:
        return self.masks[a - 1]


@dataclass(frozen=True)
class FeatureRelevance:
    index: int
    ghat: float
    tau: float
    vbar: float
    selected: bool
    fallback: bool = False


@dataclass(frozen=True)
class RelevanceReport:
    lambda1: float
    lambda2: float
    loss: str
    mode: str                 # categorical | binned
    bins: int | None
    avg_abs_corr: np.ndarray  # (d,)
    per_action: tuple         # k tuples of FeatureRelevance

    def masks(self) -> FeatureMasks:
        k = len(self.per_action)
        d = len(self.avg_abs_corr)
        m = np.zeros((k, d))
        for a_idx, feats in enumerate(self.per_action):
            for f in feats:
                m[a_idx, f.index] = 1.0 if f.selected else 0.0
        return FeatureMasks(m)

    def to_json(self) -> str:
        return json.dumps({
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "loss": self.loss,
            "mode": self.mode,
            "bins": self.bins,
            "avg_abs_corr": [float(v) for v in self.avg_abs_corr],
            "per_action": [
                {"action": a_idx + 1,
                 "features": [{"index": f.index, "ghat": f.ghat, "tau": f.tau,
                               "vbar": f.vbar, "selected": f.selected,
                               "fallback": f.fallback} for f in feats]}
                for a_idx, feats in enumerate(self.per_action)
            ],
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RelevanceReport":
        obj = json.loads(text)
        per_action = tuple(
            tuple(FeatureRelevance(f["index"], f["ghat"], f["tau"], f["vbar"],
                                   f["selected"], f.get("fallback", False))
                  for f in entry["features"])
            for entry in sorted(obj["per_action"], key=lambda e: e["action"])
        )
        return cls(obj["lambda1"], obj["lambda2"], obj["loss"], obj["mode"],
                   obj.get("bins"), np.asarray(obj["avg_abs_corr"]), per_action)


def select_features(ds: LoggedDataset, weights: np.ndarray, lambda1: float,
                    lambda2: float, loss: str = ABS,
                    binning: Binning | None = None):
    """Score every (action, feature type) pair and keep those above threshold.

    Returns (RelevanceReport, FeatureMasks). If no feature clears the
    threshold for some action, the top-scoring feature is kept as a fallback
    so the action's input encoding stays informative.
    """
    d, k, n = ds.schema.d, ds.k, ds.n
    any_continuous = any(ds.schema.is_continuous(i) for i in range(d))
    if any_continuous and binning is None:
        binning = make_bins(n)
    corr = pearson_avg_abs_corr(ds) if d >= 2 else np.zeros(d)
    per_action = []
    for a in range(1, k + 1):
        feats = []
        for i in range(d):
            continuous = ds.schema.is_continuous(i)
            mode = "binned" if continuous else "categorical"
            b_i = binning.s if continuous else int(ds.schema.cardinality(i))
            ghat = relevance_score(ds, a, i, weights, loss=loss, binning=binning)
            _, vbar, _ = sample_variances(ds, a, i, weights, binning=binning)
            tau = selection_threshold(b_i, vbar, n, float(corr[i]),
                                      lambda1, lambda2, mode=mode)
            feats.append(FeatureRelevance(i, ghat, tau, vbar, ghat > tau))
        if not any(f.selected for f in feats):
            top = max(range(d), key=lambda j: feats[j].ghat)
            f = feats[top]
            feats[top] = FeatureRelevance(f.index, f.ghat, f.tau, f.vbar,
                                          True, fallback=True)
        per_action.append(tuple(feats))
    mode = "binned" if any_continuous else "categorical"
    report = RelevanceReport(lambda1, lambda2, loss, mode,
                             binning.s if binning else None,
                             corr, tuple(per_action))
    return report, report.masks()


def truncation_bias(generator, a: int, m: float, phat=None) -> float:
    """Exact bias of the truncated importance-weighted mean under a finite
    synthetic generator.

    `generator` must expose context_probs (C,), p0 (C, k) and rbar (C, k);
    `phat` is an optional (C, k) matrix of estimated propensities (defaults
    to the true ones). Evaluated by exhaustive enumeration:
    E[ rbar(a, X) * ((1 - p0/phat) * 1{phat >= 1/m} + (1 - p0*m) * 1{phat < 1/m}) ].
    """
    probs = np.asarray(generator.context_probs, dtype=float)
    p0 = np.asarray(generator.p0, dtype=float)[:, a - 1]
    rbar = np.asarray(generator.rbar, dtype=float)[:, a - 1]
    ph = p0 if phat is None else np.asarray(phat, dtype=float)[:, a - 1]
    hi = ph >= 1.0 / m
    per_context = np.where(hi, 1.0 - p0 / ph, 1.0 - p0 * m)
    return float((probs * rbar * per_context).sum())
