"""Logging-policy estimation and importance weights.

The unknown logging policy is fit with L2-penalized multinomial logistic
regression (full-batch gradient ascent with backtracking line search). The
resulting propensities feed inverse-propensity weights, optionally truncated
at a cap to trade variance for bias.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .datasets import LoggedDataset

DEFAULT_L2 = 1e-4
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITERS = 2000


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class WeightCap:
    """Truncation level for importance weights; weights are min(1/p, m)."""

    m: float

    def __post_init__(self):
        if not self.m > 1:
            raise ValueError("cap must be > 1")

    @classmethod
    def default_for(cls, n: int) -> "WeightCap":
        # m = sqrt(n): grows with data so truncation bias vanishes while the
        # weight variance stays bounded.
        return cls(math.sqrt(n))


@dataclass(frozen=True)
class PropensityModel:
    beta: np.ndarray        # (k, d); last class pinned to zeros
    trained_on: str = ""    # digest of the training data

    def __post_init__(self):
        if not np.all(np.isfinite(self.beta)):
            raise ValueError("non-finite coefficients")

    @property
    def k(self) -> int:
        return self.beta.shape[0]

    @property
    def d(self) -> int:
        return self.beta.shape[1]

    def to_json(self) -> str:
        return json.dumps({"k": self.k, "d": self.d,
                           "beta": self.beta.tolist(),
                           "trained_on": self.trained_on}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PropensityModel":
        obj = json.loads(text)
        beta = np.asarray(obj["beta"], dtype=float)
        if beta.shape != (obj["k"], obj["d"]):
            raise ValueError("coefficient shape does not match header")
        return cls(beta, obj.get("trained_on", ""))


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict(model: PropensityModel, x: np.ndarray) -> np.ndarray:
    """Probability vector over the k actions at feature vector x."""
    return _softmax_rows(model.beta @ np.asarray(x, dtype=float))


def predict_matrix(model: PropensityModel, features: np.ndarray) -> np.ndarray:
    """(n, k) action probabilities for a feature matrix."""
    return _softmax_rows(features @ model.beta.T)


def log_likelihood_and_grad(beta: np.ndarray, features: np.ndarray,
                            actions: np.ndarray, l2: float):
    """Mean penalized log-likelihood of the logged actions and its gradient.

    The last class row of beta is pinned to zero for identifiability; its
    gradient entry is returned as zero and it carries no penalty.
    """
    n = features.shape[0]
    probs = _softmax_rows(features @ beta.T)
    idx = np.arange(n)
    ll = np.log(probs[idx, actions - 1]).mean()
    ll -= 0.5 * l2 * float((beta[:-1] ** 2).sum())
    onehot = np.zeros_like(probs)
    onehot[idx, actions - 1] = 1.0
    grad = (onehot - probs).T @ features / n
    grad[:-1] -= l2 * beta[:-1]
    grad[-1] = 0.0
    return ll, grad


def fit(ds: LoggedDataset, l2: float = DEFAULT_L2,
        max_iters: int = DEFAULT_MAX_ITERS, tol: float = DEFAULT_TOL) -> PropensityModel:
    """Fit the multinomial-logistic logging-policy model.

    Full-batch gradient ascent with backtracking line search; stops when the
    gradient max-norm drops below `tol` or after `max_iters` accepted steps.
    """
    if ds.n < ds.k:
        raise ValueError("need at least k records to fit k classes")
    if not np.all(np.isfinite(ds.features)):
        raise ValueError("non-finite features")
    beta = np.zeros((ds.k, ds.schema.d))
    step = 1.0
    ll, grad = log_likelihood_and_grad(beta, ds.features, ds.actions, l2)
    for _ in range(max_iters):
        if not np.isfinite(ll):
            raise FitError("log-likelihood overflowed; normalize features")
        gnorm2 = float((grad ** 2).sum())
        if math.sqrt(gnorm2) < tol or np.abs(grad).max() < tol:
            break
        accepted = False
        for _ in range(60):
            cand = beta + step * grad
            cand_ll, cand_grad = log_likelihood_and_grad(
                cand, ds.features, ds.actions, l2)
            if np.isfinite(cand_ll) and cand_ll >= ll + 1e-4 * step * gnorm2:
                beta, ll, grad = cand, cand_ll, cand_grad
                step *= 2.0
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
    if not np.all(np.isfinite(beta)):
        raise FitError("diverged to non-finite coefficients")
    digest = hashlib.sha256(
        np.ascontiguousarray(ds.features).tobytes()
        + np.ascontiguousarray(ds.actions).tobytes()
    ).hexdigest()[:16]
    return PropensityModel(beta, trained_on=digest)


def importance_weight(p: float, cap: WeightCap | None = None) -> float:
    """Inverse-propensity weight 1/p, truncated at cap.m when a cap is given."""
    if p <= 0:
        raise ValueError("propensity must be positive (common support)")
    w = 1.0 / p
    return min(w, cap.m) if cap is not None else w


def importance_weights(ds: LoggedDataset, model: PropensityModel | None = None,
                       cap: WeightCap | None = None) -> np.ndarray:
    """Per-record weights for the logged actions.

    Uses the dataset's true propensities when present, otherwise predicted
    propensities from `model`.
    """
    if ds.propensities is not None and ds.propensity_source == "true":
        p = ds.propensities
    elif model is not None:
        probs = predict_matrix(model, ds.features)
        p = probs[np.arange(ds.n), ds.actions - 1]
    else:
        raise ValueError("no true propensities and no model supplied")
    if np.any(p <= 0):
        raise ValueError("propensity must be positive (common support)")
    w = 1.0 / p
    if cap is not None:
        w = np.minimum(w, cap.m)
    return w
