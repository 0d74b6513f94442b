"""End-to-end experiment orchestration.

Reproduces the supervised-to-bandit evaluation protocol: convert with a
seeded logging policy, split, estimate propensities, select per-action
features, sweep hyperparameters on validation loss, train finalists, and
evaluate every configured algorithm against the hidden reward table over
repeated seeded runs.
"""
from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import dataclass, field, replace as dc_replace

import numpy as np

from . import propensity as prop
from .datasets import (SupervisedDataset, add_noise_features, apply_normalizer,
                       convert_to_bandit, fit_normalizer, split_indices)
from .evaluation import EvalResult, accuracy, ci95, improvement_score
from .policy import PolicyArchitecture, TrainConfig, forward, train
from .relevance import ABS, FeatureMasks, select_features

REPORT_SCHEMA_VERSION = 1

# tag -> (applies feature selection, uses hidden layers)
ALGORITHMS = {
    "ponn_b": (True, True),
    "ponn": (False, True),
    "poem_b": (True, False),
    "poem": (False, False),
    "logging": (False, False),
}


def algorithm_spec(tag: str):
    if tag not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {tag!r}; valid tags: "
                         + ", ".join(sorted(ALGORITHMS)))
    return ALGORITHMS[tag]


@dataclass(frozen=True)
class ExperimentConfig:
    kappa: float = 0.25
    noise_features: int = 16
    fractions: tuple = (0.49, 0.21, 0.30)
    algorithms: tuple = ("ponn_b", "ponn", "poem_b", "poem", "logging")
    runs: int = 5
    base_seed: int = 0
    propensity_mode: str = "estimated"      # true | estimated
    cap_m: float | None = None              # None: sqrt(n) when estimated
    relevance_loss: str = ABS
    lambda1_grid: tuple = (0.01, 0.03, 0.1)
    lambda2_grid: tuple = (0.0, 0.005)
    lambda3_grid: tuple = (1e-4, 1e-3, 1e-2, 1e-1)
    lr_grid: tuple = (1e-3,)
    hidden_layers: tuple = (50, 100)
    epochs: int = 500
    sweep_epochs: int = 50
    batch_size: int = 64
    patience: int = 20
    l2_propensity: float = 1e-4

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("need at least one run")
        for grid in (self.lambda1_grid, self.lambda2_grid,
                     self.lambda3_grid, self.lr_grid):
            if len(grid) == 0:
                raise ValueError("hyperparameter grids must be non-empty")
        if self.propensity_mode not in ("true", "estimated"):
            raise ValueError("propensity_mode must be true or estimated")
        for tag in self.algorithms:
            algorithm_spec(tag)

    def to_dict(self) -> dict:
        return {
            "kappa": self.kappa, "noise_features": self.noise_features,
            "fractions": list(self.fractions),
            "algorithms": list(self.algorithms), "runs": self.runs,
            "base_seed": self.base_seed,
            "propensity_mode": self.propensity_mode, "cap_m": self.cap_m,
            "relevance_loss": self.relevance_loss,
            "lambda1_grid": list(self.lambda1_grid),
            "lambda2_grid": list(self.lambda2_grid),
            "lambda3_grid": list(self.lambda3_grid),
            "lr_grid": list(self.lr_grid),
            "hidden_layers": list(self.hidden_layers),
            "epochs": self.epochs, "sweep_epochs": self.sweep_epochs,
            "batch_size": self.batch_size, "patience": self.patience,
            "l2_propensity": self.l2_propensity,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        kwargs = dict(obj)
        for key in ("fractions", "algorithms", "lambda1_grid", "lambda2_grid",
                    "lambda3_grid", "lr_grid", "hidden_layers"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass
class RunBundle:
    """Everything one run's training path may see, plus evaluation-only data
    kept on separate fields consumed only by evaluation calls."""

    train: object
    validation: object
    test_features: np.ndarray
    test_rewards: object                 # RewardTable, evaluation-only
    train_weights: np.ndarray
    val_weights: np.ndarray
    logging_probs_test: np.ndarray
    seed: int


def _strip_propensities(ds):
    return dc_replace(ds, propensities=None, propensity_source="absent")


def prepare_run(sup: SupervisedDataset, config: ExperimentConfig,
                seed: int) -> RunBundle:
    """Convert, split and weight one run's data (Algorithm step A included)."""
    noisy = add_noise_features(sup, config.noise_features, seed * 1000 + 1)
    idx_train, idx_val, idx_test = split_indices(
        noisy.n, config.fractions, seed * 1000 + 3)
    norm = fit_normalizer(noisy.features[idx_train], noisy.schema)
    features = apply_normalizer(noisy.features, norm)
    noisy = SupervisedDataset(noisy.schema, noisy.k, features, noisy.labels,
                              normalization=norm)
    conv = convert_to_bandit(noisy, config.kappa, seed * 1000 + 2)
    logged, table = conv.dataset, conv.hidden_rewards
    train_ds = logged.subset(idx_train)
    val_ds = logged.subset(idx_val)
    test_ds = logged.subset(idx_test)

    cap = None
    if config.cap_m is not None:
        cap = prop.WeightCap(config.cap_m)
    elif config.propensity_mode == "estimated":
        cap = prop.WeightCap.default_for(train_ds.n)

    if config.propensity_mode == "estimated":
        blind_train = _strip_propensities(train_ds)
        blind_val = _strip_propensities(val_ds)
        model = prop.fit(blind_train, l2=config.l2_propensity)
        train_w = prop.importance_weights(blind_train, model, cap)
        val_w = prop.importance_weights(blind_val, model, cap)
        train_ds, val_ds = blind_train, blind_val
    else:
        train_w = prop.importance_weights(train_ds, cap=cap)
        val_w = prop.importance_weights(val_ds, cap=cap)

    return RunBundle(train_ds, val_ds, test_ds.features, table.subset(idx_test),
                     train_w, val_w,
                     conv.logging_policy(test_ds.features), seed)


def _masks_for(bundle: RunBundle, config: ExperimentConfig,
               lam1: float, lam2: float):
    report, masks = select_features(bundle.train, bundle.train_weights,
                                    lam1, lam2, loss=config.relevance_loss)
    return report, masks


def _train_candidate(bundle: RunBundle, config: ExperimentConfig,
                     masks: FeatureMasks, depth: bool, lam3: float, lr: float,
                     epochs: int):
    arch = PolicyArchitecture(
        d=bundle.train.schema.d, k=bundle.train.k, masks=masks,
        hidden_layers=config.hidden_layers if depth else (),
        seed=bundle.seed * 1000 + 4)
    tc = TrainConfig(lambda3=lam3, learning_rate=lr,
                     batch_size=config.batch_size, epochs=epochs,
                     patience=config.patience, seed=bundle.seed * 1000 + 5)
    return train(arch, bundle.train, bundle.validation,
                 bundle.train_weights, bundle.val_weights, tc)


def _validation_ce(net, bundle: RunBundle) -> float:
    from .policy import loss
    return loss(net, bundle.validation.features, bundle.validation.actions,
                bundle.validation.rewards, bundle.val_weights, lambda3=0.0)


def sweep(tag: str, bundle: RunBundle, config: ExperimentConfig) -> dict:
    """Exhaustive grid search keyed on validation corrected cross-entropy.

    Step-B tags sweep (lambda1, lambda2) too; ties resolve to the smallest
    hyperparameters in lexicographic order. Hidden rewards are never read.
    """
    uses_masks, depth = algorithm_spec(tag)
    if tag == "logging":
        return {}
    if uses_masks:
        grid = itertools.product(sorted(config.lambda1_grid),
                                 sorted(config.lambda2_grid),
                                 sorted(config.lambda3_grid),
                                 sorted(config.lr_grid))
    else:
        grid = (((None, None) + pair) for pair in itertools.product(
            sorted(config.lambda3_grid), sorted(config.lr_grid)))
    best = None
    mask_cache = {}
    for lam1, lam2, lam3, lr in grid:
        if uses_masks:
            key = (lam1, lam2)
            if key not in mask_cache:
                mask_cache[key] = _masks_for(bundle, config, lam1, lam2)[1]
            masks = mask_cache[key]
        else:
            masks = FeatureMasks.all_ones(bundle.train.k,
                                          bundle.train.schema.d)
        net = _train_candidate(bundle, config, masks, depth, lam3, lr,
                               config.sweep_epochs)
        val = _validation_ce(net, bundle)
        if best is None or val < best["val_loss"] - 1e-12:
            best = {"lambda1": lam1, "lambda2": lam2, "lambda3": lam3,
                    "lr": lr, "val_loss": val}
    return best


def run_algorithm(tag: str, bundle: RunBundle, config: ExperimentConfig) -> dict:
    """Train (if needed) and evaluate a single algorithm for one run."""
    uses_masks, depth = algorithm_spec(tag)
    if tag == "logging":
        acc = accuracy(bundle.logging_probs_test, bundle.test_rewards)
        return {"algorithm": tag, "acc": acc, "hyperparameters": {},
                "depth": 0, "relevance_digest": None}
    chosen = sweep(tag, bundle, config)
    if uses_masks:
        report, masks = _masks_for(bundle, config, chosen["lambda1"],
                                   chosen["lambda2"])
        digest = _digest(report.to_json())
    else:
        masks = FeatureMasks.all_ones(bundle.train.k, bundle.train.schema.d)
        digest = None
    net = _train_candidate(bundle, config, masks, depth, chosen["lambda3"],
                           chosen["lr"], config.epochs)
    probs = forward(net, bundle.test_features)
    acc = accuracy(probs, bundle.test_rewards)
    return {"algorithm": tag, "acc": acc,
            "hyperparameters": {k: chosen[k] for k in
                                ("lambda1", "lambda2", "lambda3", "lr")},
            "depth": len(config.hidden_layers) if depth else 0,
            "relevance_digest": digest}


def _digest(text: str) -> str:
    import hashlib
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def run_experiment(sup: SupervisedDataset, config: ExperimentConfig) -> dict:
    """Full protocol over `config.runs` seeded runs; returns the JSON report
    as a dict (reproducible except for the wall_clock_seconds field)."""
    started = time.time()
    per_run = []
    errors = []
    for r in range(config.runs):
        seed = config.base_seed + r
        try:
            bundle = prepare_run(sup, config, seed)
            results = [run_algorithm(tag, bundle, config)
                       for tag in config.algorithms]
            per_run.append({"run": r, "seed": seed, "results": results})
        except Exception as exc:   # keep remaining runs alive
            errors.append({"run": r, "seed": seed, "error": str(exc)})
    summary = {}
    for tag in config.algorithms:
        accs = [res["acc"] for run in per_run for res in run["results"]
                if res["algorithm"] == tag]
        if len(accs) >= 2:
            mean, half = ci95(accs)
        elif accs:
            mean, half = accs[0], 0.0
        else:
            mean, half = float("nan"), float("nan")
        summary[tag] = {"acc_mean": mean, "acc_ci95": half}
    for tag in config.algorithms:
        ours = summary[tag]["acc_mean"]
        summary[tag]["improvement_over"] = {
            other: improvement_score(ours, summary[other]["acc_mean"])
            for other in config.algorithms
            if other != tag and summary[other]["acc_mean"] < 1.0
        }
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "config": config.to_dict(),
        "summary": summary,
        "runs": per_run,
        "errors": errors,
        "wall_clock_seconds": time.time() - started,
    }


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)


def report_table(report: dict) -> str:
    """Human-readable accuracy table."""
    lines = [f"{'algorithm':<10} {'accuracy':>10} {'ci95':>8}"]
    for tag, row in report["summary"].items():
        lines.append(f"{tag:<10} {row['acc_mean']:>10.4f} "
                     f"{row['acc_ci95']:>8.4f}")
    return "\n".join(lines)
