"""Personalized, aggregation-aware federated training on synthetic label-skewed data."""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field

import numpy as np


class Algorithm(str, enum.Enum):
    PAFL = "pafl"
    PERSONALIZED = "personalized"
    VANILLA = "vanilla"


class DivergenceError(RuntimeError):
    def __init__(self, round_index, algorithm):
        self.round = round_index
        super().__init__(f"{algorithm} training diverged (non-finite loss) in round {round_index}")


def pafl_local_update(w_u, w_global, grad, lr: float, lam: float):
    """One personalized step ``w_u - lr * (grad + lam * (w_u - w_global))``."""
    w_u = np.asarray(w_u, dtype=float)
    w_global = np.asarray(w_global, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if w_u.shape != w_global.shape or w_u.shape != grad.shape:
        raise ValueError(f"shape mismatch: {w_u.shape}, {w_global.shape}, {grad.shape}")
    if not lr > 0 or not lam >= 0:
        raise ValueError("need lr > 0 and lam >= 0")
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient")
    if lam == 0:
        return w_u - lr * grad
    return w_u - lr * (grad + lam * (w_u - w_global))


def pafl_aggregate(models, weights):
    """Weighted mean ``sum(a_u * w_u) / sum(a_u)``."""
    models = [np.asarray(m, dtype=float) for m in models]
    if not models:
        raise ValueError("no client models to aggregate")
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (len(models),) or np.any(weights < 0) or not weights.sum() > 0:
        raise ValueError("weights must be nonnegative, one per model, with a positive sum")
    return np.tensordot(weights / weights.sum(), np.stack(models), axes=1)


# multinomial logistic regression with the bias folded into the features

def _design(x):
    return np.hstack([x, np.ones((len(x), 1))])


def softmax_loss_grad(w, x, y, n_classes, design=None):
    """Mean cross-entropy and its gradient; ``w`` is the flattened (dim+1, classes) matrix."""
    X = _design(x) if design is None else design
    W = w.reshape(X.shape[1], n_classes)
    logits = X @ W
    logits -= logits.max(axis=1, keepdims=True)
    logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    n = len(y)
    loss = -logp[np.arange(n), y].mean()
    prob = np.exp(logp)
    prob[np.arange(n), y] -= 1.0
    return loss, (X.T @ prob / n).ravel()


def accuracy(w, x, y, n_classes):
    X = _design(x)
    return float(np.mean((X @ w.reshape(X.shape[1], n_classes)).argmax(axis=1) == y))


@dataclass
class ClientData:
    x: np.ndarray
    y: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray

    def __post_init__(self):
        self.design = _design(self.x)


@dataclass
class FederatedData:
    clients: list
    x_test: np.ndarray
    y_test: np.ndarray
    proportions: np.ndarray     # (U, classes): share of each label's samples held by each client
    n_classes: int

    @property
    def dim(self) -> int:
        return self.x_test.shape[1]


def make_label_skew_data(seed: int, n_clients: int = 10, n_classes: int = 10, dim: int = 20,
                         dominant: int = 2, dominant_frac: float = 0.95,
                         samples_range=(60, 300), test_per_class: int = 100,
                         cluster_spread: float = 0.5, noise: float = 1.0) -> FederatedData:
    """Gaussian class clusters split so each client mostly holds ``dominant`` labels."""
    rng = np.random.default_rng([seed, 101])
    means = rng.normal(0.0, cluster_spread, size=(n_classes, dim))

    def draw(labels):
        return means[labels] + rng.normal(0.0, noise, size=(len(labels), dim))

    mix = np.full((n_clients, n_classes), (1 - dominant_frac) / n_classes)
    for u in range(n_clients):
        top = [(u * dominant + j) % n_classes for j in range(dominant)]
        mix[u, top] += dominant_frac / dominant
    clients, counts = [], np.zeros((n_clients, n_classes))
    for u in range(n_clients):
        n_u = int(rng.integers(samples_range[0], samples_range[1] + 1))
        y = rng.choice(n_classes, size=n_u, p=mix[u])
        y_test = rng.choice(n_classes, size=max(20, n_u // 4), p=mix[u])
        clients.append(ClientData(draw(y), y, draw(y_test), y_test))
        counts[u] = np.bincount(y, minlength=n_classes)
    y_test = np.repeat(np.arange(n_classes), test_per_class)
    x_test = draw(y_test)
    totals = counts.sum(axis=0)
    proportions = counts / np.where(totals > 0, totals, 1.0)
    return FederatedData(clients, x_test, y_test, proportions, n_classes)


@dataclass
class FLConfig:
    rounds: int = 50
    local_steps: int = 50
    lr: float = 1.0
    lam: float = 0.5
    weight_rule: str = "data-size"      # "data-size", "uniform" or "inverse-loss"
    algorithm: Algorithm = Algorithm.PAFL

    def validate(self):
        if self.rounds < 1 or self.local_steps < 1:
            raise ValueError("rounds and local_steps must be positive")
        if not self.lr > 0 or not self.lam >= 0:
            raise ValueError("need lr > 0 and lam >= 0")
        if self.weight_rule not in ("data-size", "uniform", "inverse-loss"):
            raise ValueError(f"unknown weight_rule {self.weight_rule!r}")
        Algorithm(self.algorithm)


@dataclass
class FLState:
    w: np.ndarray
    client_models: list
    weights: np.ndarray
    round: int = 0
    history: list = field(default_factory=list)


def _weights(rule, data, w):
    if rule == "uniform":
        return np.ones(len(data.clients))
    if rule == "data-size":
        return np.array([len(c.y) for c in data.clients], dtype=float)
    losses = np.array([softmax_loss_grad(w, c.x, c.y, data.n_classes)[0] for c in data.clients])
    return 1.0 / np.maximum(losses, 1e-12)


def _local_train(w_global, client, data, steps, lr, lam):
    w = w_global.copy()
    for _ in range(steps):
        _, g = softmax_loss_grad(w, client.x, client.y, data.n_classes, client.design)
        w = pafl_local_update(w, w_global, g, lr, lam)
    return w


def train(config: FLConfig, data: FederatedData, seed: int = 0) -> list:
    """Run one algorithm; returns per-round metric rows.

    PAFL and vanilla report the global model on the pooled test set.
    The personalized baseline fine-tunes the vanilla global model on each
    client and reports the client-averaged metrics on the clients' own test
    splits.
    """
    config.validate()
    algo = Algorithm(config.algorithm)
    n_params = (data.dim + 1) * data.n_classes
    w = np.zeros(n_params)
    if algo is Algorithm.PAFL:
        lam, rule = config.lam, config.weight_rule
    else:
        lam, rule = 0.0, "uniform"
    rows = []
    for k in range(1, config.rounds + 1):
        alpha = _weights(rule, data, w)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                models = [_local_train(w, c, data, config.local_steps, config.lr, lam) for c in data.clients]
        except FloatingPointError:
            raise DivergenceError(k, algo.value) from None
        w = pafl_aggregate(models, alpha)
        if not np.all(np.isfinite(w)):
            raise DivergenceError(k, algo.value)
        if algo is Algorithm.PERSONALIZED:
            losses, accs = [], []
            for c in data.clients:
                w_c = _local_train(w, c, data, config.local_steps, config.lr, 0.0)
                losses.append(softmax_loss_grad(w_c, c.x_test, c.y_test, data.n_classes)[0])
                accs.append(accuracy(w_c, c.x_test, c.y_test, data.n_classes))
            loss, acc = float(np.mean(losses)), float(np.mean(accs))
        else:
            loss = float(softmax_loss_grad(w, data.x_test, data.y_test, data.n_classes)[0])
            acc = accuracy(w, data.x_test, data.y_test, data.n_classes)
        if not np.isfinite(loss):
            raise DivergenceError(k, algo.value)
        rows.append({"round": k, "algorithm": algo.value, "accuracy": acc, "loss": loss, "seed": seed})
    return rows


def metrics_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("round", "algorithm", "accuracy", "loss", "seed"))
    for r in rows:
        w.writerow((r["round"], r["algorithm"], repr(r["accuracy"]), repr(r["loss"]), r["seed"]))
    return buf.getvalue()
