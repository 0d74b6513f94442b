"""Stochastic policy network over action-masked feature encodings.

Each action gets a slot in a d*k input encoding holding the feature vector
masked by that action's selected features; shared sigmoid layers and a
softmax head turn the per-action scores into a policy. Training minimizes
the propensity-corrected cross-entropy plus an L2 penalty with Adam. Zero
hidden layers reduce the policy to a linear-in-encoding baseline.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .relevance import FeatureMasks

PROB_FLOOR = 1e-12


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class PolicyArchitecture:
    d: int
    k: int
    masks: FeatureMasks
    hidden_layers: tuple[int, ...] = (50, 100)
    activation: str = "sigmoid"
    seed: int = 0

    def __post_init__(self):
        if self.masks.k != self.k or self.masks.d != self.d:
            raise ValueError("mask shape does not match (k, d)")
        if any(w < 1 for w in self.hidden_layers):
            raise ValueError("layer widths must be >= 1")
        if self.activation != "sigmoid":
            raise ValueError("only sigmoid activation is supported")


@dataclass(frozen=True)
class TrainConfig:
    lambda3: float = 1e-3
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 500
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.lambda3 < 0:
            raise ValueError("lambda3 must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")


class PolicyNetwork:
    """Weights/biases of the shared policy layers plus the softmax head."""

    def __init__(self, architecture: PolicyArchitecture, layers, head_w):
        self.architecture = architecture
        self.layers = [(np.asarray(W, dtype=float), np.asarray(b, dtype=float))
                       for W, b in layers]
        self.head_w = np.asarray(head_w, dtype=float)
        self._check_shapes()

    def _check_shapes(self):
        arch = self.architecture
        fan_in = arch.d * arch.k
        for width, (W, b) in zip(arch.hidden_layers, self.layers):
            if W.shape != (width, fan_in) or b.shape != (width,):
                raise ValueError("layer shape mismatch")
            fan_in = width
        if len(self.layers) != len(arch.hidden_layers):
            raise ValueError("layer count mismatch")
        if self.head_w.shape != (fan_in,):
            raise ValueError("head shape mismatch")
        for p in self.parameters():
            if not np.all(np.isfinite(p)):
                raise ValueError("non-finite parameter")

    def parameters(self):
        for W, b in self.layers:
            yield W
            yield b
        yield self.head_w

    def copy_parameters(self):
        return [p.copy() for p in self.parameters()]

    def set_parameters(self, params):
        params = list(params)
        for i in range(len(self.layers)):
            self.layers[i] = (params[2 * i], params[2 * i + 1])
        self.head_w = params[-1]

    def to_json(self) -> str:
        arch = self.architecture
        return json.dumps({
            "architecture": {
                "d": arch.d, "k": arch.k,
                "hidden_layers": list(arch.hidden_layers),
                "activation": arch.activation, "seed": arch.seed,
            },
            "masks": arch.masks.masks.tolist(),
            "layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in self.layers],
            "head_w": self.head_w.tolist(),
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PolicyNetwork":
        obj = json.loads(text)
        a = obj["architecture"]
        arch = PolicyArchitecture(a["d"], a["k"],
                                  FeatureMasks(np.asarray(obj["masks"], dtype=float)),
                                  tuple(a["hidden_layers"]), a["activation"],
                                  a["seed"])
        layers = [(np.asarray(l["W"]), np.asarray(l["b"])) for l in obj["layers"]]
        return cls(arch, layers, np.asarray(obj["head_w"]))


def initialize(architecture: PolicyArchitecture) -> PolicyNetwork:
    """Seeded uniform(-sqrt(6/(fan_in+fan_out)), +) initialization."""
    rng = np.random.default_rng(architecture.seed)
    layers = []
    fan_in = architecture.d * architecture.k
    for width in architecture.hidden_layers:
        limit = math.sqrt(6.0 / (fan_in + width))
        layers.append((rng.uniform(-limit, limit, size=(width, fan_in)),
                       np.zeros(width)))
        fan_in = width
    limit = math.sqrt(6.0 / (fan_in + 1))
    head_w = rng.uniform(-limit, limit, size=fan_in)
    return PolicyNetwork(architecture, layers, head_w)


def encode(x: np.ndarray, a: int, masks: FeatureMasks) -> np.ndarray:
    """Block encoding of length d*k: slot a holds x masked by that action's
    selected features, every other slot is zero."""
    d = masks.d
    out = np.zeros(d * masks.k)
    out[(a - 1) * d: a * d] = np.asarray(x, dtype=float) * masks.selected(a)
    return out


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward_cache(net: PolicyNetwork, X: np.ndarray):
    arch = net.architecture
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite input")
    masked = X[:, None, :] * arch.masks.masks[None, :, :]   # (n, k, d)
    acts = []
    if not net.layers:
        scores = np.einsum("nad,ad->na", masked,
                           net.head_w.reshape(arch.k, arch.d))
    else:
        W1, b1 = net.layers[0]
        W1b = W1.reshape(-1, arch.k, arch.d)
        act = _sigmoid(np.einsum("nad,had->nah", masked, W1b) + b1)
        acts.append(act)
        for W, b in net.layers[1:]:
            act = _sigmoid(act @ W.T + b)
            acts.append(act)
        scores = act @ net.head_w
    return _softmax_rows(scores), masked, acts


def forward(net: PolicyNetwork, X: np.ndarray) -> np.ndarray:
    """Policy probabilities; accepts a single vector or an (n, d) batch."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    probs, _, _ = _forward_cache(net, X[None, :] if single else X)
    return probs[0] if single else probs


def recommend(net: PolicyNetwork, x: np.ndarray) -> int:
    """Highest-probability action (1-based); ties go to the lowest index."""
    return int(np.argmax(forward(net, np.asarray(x, dtype=float)))) + 1


def loss(net: PolicyNetwork, X: np.ndarray, actions: np.ndarray,
         rewards: np.ndarray, weights: np.ndarray, lambda3: float) -> float:
    """Mean propensity-weighted cross-entropy of the logged actions plus
    lambda3 times the sum of squared parameters."""
    probs = forward(net, X)
    picked = np.clip(probs[np.arange(len(actions)), actions - 1],
                     PROB_FLOOR, None)
    data = float((-weights * rewards * np.log(picked)).mean())
    reg = sum(float((p ** 2).sum()) for p in net.parameters())
    return data + lambda3 * reg


def loss_and_grads(net: PolicyNetwork, X: np.ndarray, actions: np.ndarray,
                   rewards: np.ndarray, weights: np.ndarray, lambda3: float):
    """Loss plus analytic gradients for every parameter (manual backprop)."""
    n = X.shape[0]
    arch = net.architecture
    probs, masked, acts = _forward_cache(net, X)
    idx = np.arange(n)
    picked = np.clip(probs[idx, actions - 1], PROB_FLOOR, None)
    data = float((-weights * rewards * np.log(picked)).mean())
    reg = sum(float((p ** 2).sum()) for p in net.parameters())
    total = data + lambda3 * reg

    coeff = weights * rewards / n
    dscore = probs * coeff[:, None]
    dscore[idx, actions - 1] -= coeff

    grads = []
    if not net.layers:
        gw = np.einsum("na,nad->ad", dscore, masked).reshape(-1)
        grads.append(gw + 2.0 * lambda3 * net.head_w)
    else:
        act_last = acts[-1]
        gw = np.einsum("na,nah->h", dscore, act_last)
        delta = (dscore[:, :, None] * net.head_w[None, None, :]
                 * act_last * (1.0 - act_last))
        layer_grads = []
        for l in range(len(net.layers) - 1, 0, -1):
            W, _ = net.layers[l]
            prev = acts[l - 1]
            gW = np.einsum("nah,nag->hg", delta, prev)
            gb = delta.sum(axis=(0, 1))
            layer_grads.append((gW, gb))
            delta = (delta @ W) * prev * (1.0 - prev)
        gW1 = np.einsum("nah,nad->had", delta, masked).reshape(
            net.layers[0][0].shape)
        gb1 = delta.sum(axis=(0, 1))
        layer_grads.append((gW1, gb1))
        layer_grads.reverse()
        for (W, b), (gW, gb) in zip(net.layers, layer_grads):
            grads.append(gW + 2.0 * lambda3 * W)
            grads.append(gb + 2.0 * lambda3 * b)
        grads.append(gw + 2.0 * lambda3 * net.head_w)
    return total, grads


def _validation_loss(net, X, actions, rewards, weights) -> float:
    return loss(net, X, actions, rewards, weights, lambda3=0.0)


def train(architecture: PolicyArchitecture, train_ds, val_ds,
          train_weights: np.ndarray, val_weights: np.ndarray,
          config: TrainConfig) -> PolicyNetwork:
    """Minibatch Adam on the corrected cross-entropy objective.

    Keeps the parameters with the best validation loss; stops early after
    `patience` epochs without improvement. Deterministic given seeds.
    """
    net = initialize(architecture)
    params = net.copy_parameters()
    net.set_parameters(params)
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    rng = np.random.default_rng(config.seed)
    n = train_ds.n
    best_val = math.inf
    best_params = net.copy_parameters()
    stale = 0
    step = 0
    last_finite_epoch = -1
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            total, grads = loss_and_grads(
                net, train_ds.features[batch], train_ds.actions[batch],
                train_ds.rewards[batch], train_weights[batch], config.lambda3)
            if not math.isfinite(total):
                raise TrainingError(
                    f"loss diverged at epoch {epoch}; last finite epoch "
                    f"{last_finite_epoch}")
            step += 1
            lr_t = config.learning_rate * (
                math.sqrt(1.0 - config.beta2 ** step)
                / (1.0 - config.beta1 ** step))
            for i, g in enumerate(grads):
                m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g
                v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g
                params[i] -= lr_t * m[i] / (np.sqrt(v[i]) + config.eps)
        last_finite_epoch = epoch
        val = _validation_loss(net, val_ds.features, val_ds.actions,
                               val_ds.rewards, val_weights)
        if not math.isfinite(val):
            raise TrainingError(
                f"validation loss diverged at epoch {epoch}; last finite "
                f"epoch {last_finite_epoch - 1}")
        if val < best_val - 1e-12:
            best_val = val
            best_params = net.copy_parameters()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    net.set_parameters(best_params)
    return net
