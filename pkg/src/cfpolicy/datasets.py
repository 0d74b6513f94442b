"""Logged contextual-bandit datasets: loading, validation, synthesis and splitting.

A logged record is (feature vector, action taken, observed reward, optional
propensity of the taken action). Supervised multiclass data can be converted
into biased logged data with a softmax logging policy; the full reward table
is kept aside for evaluation only.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

CATEGORICAL = "categorical"
CONTINUOUS = "continuous"


class ValidationError(ValueError):
    """Dataset contents violate the schema or value ranges."""


class ParseError(ValueError):
    """Malformed input file."""


@dataclass(frozen=True)
class FeatureKind:
    kind: str
    cardinality: int | None = None

    def __post_init__(self):
        if self.kind not in (CATEGORICAL, CONTINUOUS):
            raise ValidationError(f"unknown feature kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            if self.cardinality is None or self.cardinality < 2:
                raise ValidationError("categorical feature needs cardinality >= 2")


@dataclass(frozen=True)
class FeatureSchema:
    kinds: tuple[FeatureKind, ...]
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        if len(self.kinds) < 1:
            raise ValidationError("schema needs at least one feature type")
        if self.names is not None and len(self.names) != len(self.kinds):
            raise ValidationError("names length must match feature count")

    @property
    def d(self) -> int:
        return len(self.kinds)

    def cardinality(self, i: int) -> int | None:
        return self.kinds[i].cardinality

    def is_continuous(self, i: int) -> bool:
        return self.kinds[i].kind == CONTINUOUS

    @classmethod
    def categorical(cls, cardinalities) -> "FeatureSchema":
        return cls(tuple(FeatureKind(CATEGORICAL, int(b)) for b in cardinalities))

    @classmethod
    def continuous(cls, d: int) -> "FeatureSchema":
        return cls(tuple(FeatureKind(CONTINUOUS) for _ in range(d)))

    def to_dict(self) -> dict:
        return {
            "kinds": [
                {"kind": k.kind, "cardinality": k.cardinality} for k in self.kinds
            ],
            "names": list(self.names) if self.names else None,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "FeatureSchema":
        kinds = tuple(
            FeatureKind(k["kind"], k.get("cardinality")) for k in obj["kinds"]
        )
        names = tuple(obj["names"]) if obj.get("names") else None
        return cls(kinds, names)


@dataclass(frozen=True)
class LoggedRecord:
    x: np.ndarray
    a: int
    r_obs: float
    p0: float | None = None


@dataclass(frozen=True)
class LoggedDataset:
    """n logged records stored columnwise; actions are 1-based."""

    schema: FeatureSchema
    k: int
    features: np.ndarray          # (n, d) float64
    actions: np.ndarray           # (n,) int, values in 1..k
    rewards: np.ndarray           # (n,) float in [0, 1]
    propensities: np.ndarray | None = None   # (n,) float in (0, 1]
    propensity_source: str = "absent"        # true | estimated | absent
    normalization: tuple | None = None       # per-feature (lo, hi) or None

    def __post_init__(self):
        if self.k < 2:
            raise ValidationError("need at least two actions")
        n, d = self.features.shape
        if d != self.schema.d:
            raise ValidationError("feature width does not match schema")
        if self.actions.shape != (n,) or self.rewards.shape != (n,):
            raise ValidationError("column lengths disagree")
        if n and (self.actions.min() < 1 or self.actions.max() > self.k):
            bad = int(np.argmax((self.actions < 1) | (self.actions > self.k)))
            raise ValidationError(f"action out of range at row {bad}")
        if n and (self.rewards.min() < 0 or self.rewards.max() > 1):
            bad = int(np.argmax((self.rewards < 0) | (self.rewards > 1)))
            raise ValidationError(f"reward outside [0,1] at row {bad}")
        if self.propensity_source == "true" and self.propensities is None:
            raise ValidationError("propensity_source=true requires propensities")
        if self.propensities is not None and n:
            if self.propensities.min() <= 0 or self.propensities.max() > 1:
                bad = int(
                    np.argmax((self.propensities <= 0) | (self.propensities > 1))
                )
                raise ValidationError(f"propensity outside (0,1] at row {bad}")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    def record(self, j: int) -> LoggedRecord:
        p = None if self.propensities is None else float(self.propensities[j])
        return LoggedRecord(self.features[j], int(self.actions[j]),
                            float(self.rewards[j]), p)

    def subset(self, idx: np.ndarray) -> "LoggedDataset":
        props = None if self.propensities is None else self.propensities[idx]
        return replace(self, features=self.features[idx],
                       actions=self.actions[idx], rewards=self.rewards[idx],
                       propensities=props)


@dataclass(frozen=True)
class SupervisedDataset:
    """Multiclass rows with full reward vectors R(a) = 1{label == a}."""

    schema: FeatureSchema
    k: int
    features: np.ndarray   # (n, d)
    labels: np.ndarray     # (n,) int in 1..k
    normalization: tuple | None = None

    def __post_init__(self):
        n, d = self.features.shape
        if d != self.schema.d:
            raise ValidationError("feature width does not match schema")
        if self.labels.shape != (n,):
            raise ValidationError("label column length disagrees")
        if n and (self.labels.min() < 1 or self.labels.max() > self.k):
            bad = int(np.argmax((self.labels < 1) | (self.labels > self.k)))
            raise ValidationError(f"label out of range at row {bad}")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    def reward_table(self) -> np.ndarray:
        table = np.zeros((self.n, self.k))
        table[np.arange(self.n), self.labels - 1] = 1.0
        return table

    def subset(self, idx: np.ndarray) -> "SupervisedDataset":
        return replace(self, features=self.features[idx], labels=self.labels[idx])


@dataclass(frozen=True)
class RewardTable:
    """Hidden per-record full rewards. Evaluation-only: no training code path
    accepts this type."""

    rewards: np.ndarray   # (n, k)

    @property
    def n(self) -> int:
        return self.rewards.shape[0]

    def subset(self, idx: np.ndarray) -> "RewardTable":
        return RewardTable(self.rewards[idx])


@dataclass(frozen=True)
class Conversion:
    """Result of a supervised-to-bandit conversion.

    `dataset` is what training may see; `hidden_rewards` is evaluation-only;
    `theta` are the logging-policy coefficients (used to score the logging
    policy itself on held-out rows).
    """

    dataset: LoggedDataset
    hidden_rewards: RewardTable
    theta: np.ndarray      # (k, d)
    kappa: float
    seed: int

    def logging_policy(self, features: np.ndarray) -> np.ndarray:
        return _softmax(features @ self.theta.T)

    def theta_digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.theta).tobytes()).hexdigest()[:16]


def _softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def fit_normalizer(features: np.ndarray, schema: FeatureSchema) -> tuple:
    """Per continuous column min/max; categorical columns get None."""
    consts = []
    for i in range(schema.d):
        if schema.is_continuous(i):
            lo = float(features[:, i].min())
            hi = float(features[:, i].max())
            consts.append((lo, hi))
        else:
            consts.append(None)
    return tuple(consts)


def apply_normalizer(features: np.ndarray, consts: tuple) -> np.ndarray:
    out = features.astype(float).copy()
    for i, c in enumerate(consts):
        if c is None:
            continue
        lo, hi = c
        span = hi - lo
        if span <= 0:
            out[:, i] = 0.0
        else:
            out[:, i] = np.clip((out[:, i] - lo) / span, 0.0, 1.0)
    return out


def load_csv(path, schema: FeatureSchema, k: int,
             normalization: tuple | None = None):
    """Load a CSV with a header row as a supervised or logged dataset.

    Row width d+1 means supervised (trailing label column); width d+2 or d+3
    means logged (action, reward, optional propensity). Continuous columns
    are min-max normalized to [0, 1] unless `normalization` constants from an
    earlier load are supplied.
    """
    d = schema.d
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"{path}: empty file")
        width = len(header)
        for lineno, row in enumerate(reader):
            if len(row) != width:
                raise ParseError(f"{path}: row {lineno} has {len(row)} fields, "
                                 f"expected {width}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ParseError(f"{path}: row {lineno}: {exc}") from None
    if width not in (d + 1, d + 2, d + 3):
        raise ParseError(f"{path}: {width} columns do not match schema d={d}")
    data = np.asarray(rows, dtype=float).reshape(len(rows), width)
    features = data[:, :d]
    _check_categorical(features, schema)
    if normalization is None:
        normalization = fit_normalizer(features, schema)
    features = apply_normalizer(features, normalization)
    if width == d + 1:
        labels = data[:, d]
        _check_integral(labels, "label")
        return SupervisedDataset(schema, k, features, labels.astype(int),
                                 normalization=normalization)
    actions = data[:, d]
    _check_integral(actions, "action")
    rewards = data[:, d + 1]
    props = data[:, d + 2] if width == d + 3 else None
    source = "true" if props is not None else "absent"
    return LoggedDataset(schema, k, features, actions.astype(int), rewards,
                         propensities=props, propensity_source=source,
                         normalization=normalization)


def _check_categorical(features: np.ndarray, schema: FeatureSchema):
    for i in range(schema.d):
        if schema.is_continuous(i):
            continue
        col = features[:, i]
        if col.size == 0:
            continue
        if np.any(col != np.round(col)) or col.min() < 0:
            bad = int(np.argmax((col != np.round(col)) | (col < 0)))
            raise ValidationError(
                f"categorical feature {i} not a non-negative integer at row {bad}")
        b = schema.cardinality(i)
        if col.max() >= b:
            bad = int(np.argmax(col >= b))
            raise ValidationError(
                f"categorical feature {i} exceeds cardinality {b} at row {bad}")


def _check_integral(col: np.ndarray, what: str):
    if col.size and np.any(col != np.round(col)):
        bad = int(np.argmax(col != np.round(col)))
        raise ValidationError(f"{what} not integral at row {bad}")


def convert_to_bandit(sup: SupervisedDataset, kappa: float, seed: int) -> Conversion:
    """Synthesize a biased logged dataset from supervised rows.

    Draws per-label coefficients from N(0, kappa*I), samples each logged
    action from the induced softmax logging policy, and observes only the
    reward of the sampled action. Deterministic given `seed`.
    """
    if kappa < 0:
        raise ValueError("kappa must be >= 0")
    rng = np.random.default_rng(seed)
    d, k, n = sup.schema.d, sup.k, sup.n
    theta = rng.normal(0.0, math.sqrt(kappa), size=(k, d)) if kappa > 0 \
        else np.zeros((k, d))
    probs = _softmax(sup.features @ theta.T)
    cum = np.cumsum(probs, axis=1)
    u = rng.random(n)
    actions = 1 + (u[:, None] >= cum).sum(axis=1)
    actions = np.minimum(actions, k).astype(int)
    p0 = probs[np.arange(n), actions - 1]
    rewards = (actions == sup.labels).astype(float)
    logged = LoggedDataset(sup.schema, k, sup.features, actions, rewards,
                           propensities=p0, propensity_source="true",
                           normalization=sup.normalization)
    return Conversion(logged, RewardTable(sup.reward_table()), theta,
                      float(kappa), int(seed))


def add_noise_features(sup: SupervisedDataset, count: int, seed: int) -> SupervisedDataset:
    """Append `count` irrelevant continuous features, i.i.d. standard normal
    min-max normalized to [0, 1]."""
    if count < 0:
        raise ValueError("count must be >= 0")
    if count == 0:
        return sup
    rng = np.random.default_rng(seed)
    noise = rng.normal(size=(sup.n, count))
    lo = noise.min(axis=0)
    hi = noise.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    noise = (noise - lo) / span
    kinds = sup.schema.kinds + tuple(FeatureKind(CONTINUOUS) for _ in range(count))
    names = None
    if sup.schema.names is not None:
        names = sup.schema.names + tuple(f"noise_{j}" for j in range(count))
    schema = FeatureSchema(kinds, names)
    norm = None
    if sup.normalization is not None:
        norm = sup.normalization + tuple((0.0, 1.0) for _ in range(count))
    return SupervisedDataset(schema, sup.k,
                             np.hstack([sup.features, noise]),
                             sup.labels, normalization=norm)


def split_indices(n: int, fractions, seed: int):
    """Disjoint exhaustive (train, validation, test) index partition.

    Validation and test sizes are floor-rounded; the remainder goes to train.
    """
    f_train, f_val, f_test = fractions
    if min(f_train, f_val, f_test) < 0:
        raise ValueError("fractions must be non-negative")
    if abs(f_train + f_val + f_test - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    n_val = int(math.floor(f_val * n))
    n_test = int(math.floor(f_test * n))
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) == 0:
        raise ValueError(f"empty split: sizes ({n_train}, {n_val}, {n_test})")
    perm = np.random.default_rng(seed).permutation(n)
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


def split(ds, fractions, seed: int):
    """Shuffle-split a dataset into (train, validation, test)."""
    idx = split_indices(ds.n, fractions, seed)
    return tuple(ds.subset(i) for i in idx)


def save_logged_csv(ds: LoggedDataset, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        cols = [f"f_{i}" for i in range(ds.schema.d)] + ["action", "reward"]
        if ds.propensities is not None:
            cols.append("propensity")
        writer.writerow(cols)
        for j in range(ds.n):
            row = [repr(float(v)) for v in ds.features[j]]
            row += [str(int(ds.actions[j])), repr(float(ds.rewards[j]))]
            if ds.propensities is not None:
                row.append(repr(float(ds.propensities[j])))
            writer.writerow(row)


def save_conversion(conv: Conversion, prefix):
    """Write logged CSV plus the hidden-reward sidecar and a manifest."""
    prefix = str(prefix)
    save_logged_csv(conv.dataset, prefix + ".csv")
    with open(prefix + ".rewards.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"r_{a}" for a in range(1, conv.dataset.k + 1)])
        for row in conv.hidden_rewards.rewards:
            writer.writerow([repr(float(v)) for v in row])
    manifest = {
        "kappa": conv.kappa,
        "seed": conv.seed,
        "theta_digest": conv.theta_digest(),
        "n": conv.dataset.n,
        "k": conv.dataset.k,
        "d": conv.dataset.schema.d,
    }
    with open(prefix + ".manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_reward_sidecar(path) -> RewardTable:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = [[float(v) for v in row] for row in reader]
    return RewardTable(np.asarray(rows, dtype=float))
