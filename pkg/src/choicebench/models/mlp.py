"""Feed-forward networks with a softmax output layer.

One hidden layer gives the shallow network; two or more hidden layers
(optionally with dropout) give the deep variant. Training minimises the
mean log-loss plus ``l2 / 2 * ||W||^2`` either by mini-batch gradient
descent (plain SGD or Adam updates) or by full-batch BFGS.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..data import ChoiceDataset
from ..rng import stream
from ..synthgen import softmax
from .base import PROB_FLOOR, ProbabilisticChoiceModel, TrainingError
from .mnl import bfgs

log = logging.getLogger(__name__)


@dataclass
class MLPConfig:
    hidden_widths: list[int] = field(default_factory=lambda: [20])
    activation: str = "tanh"
    dropout_rate: float = 0.0
    epochs: int = 200
    batch_size: int = 256
    learning_rate: float = 0.01
    solver: str = "adam"
    l2: float = 0.0
    tolerance: float = 1e-5
    patience: int = 10
    max_iter: int = 100
    seed: int = 0

    def __post_init__(self):
        self.hidden_widths = [int(w) for w in self.hidden_widths]
        if not self.hidden_widths or min(self.hidden_widths) < 1:
            raise ValueError("hidden widths must be >= 1")
        if self.activation not in ("tanh", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.solver not in ("sgd", "adam", "bfgs"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.solver == "bfgs" and self.dropout_rate > 0:
            raise ValueError("the full-batch bfgs solver does not support dropout")
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("invalid training schedule")


def _act(name, z):
    return np.tanh(z) if name == "tanh" else np.maximum(z, 0.0)


def _act_grad(name, z, a):
    # a is the unmasked activation of z
    return 1.0 - a * a if name == "tanh" else (z > 0).astype(float)


class MLP(ProbabilisticChoiceModel):
    kind = "mlp"

    def __init__(self, config: MLPConfig | None = None):
        self.config = config or MLPConfig()
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        self.loss_history: list[float] = []
        self.n_iter = 0

    # parameters ---------------------------------------------------------
    def init_params(self, n_in: int, n_out: int, rng: np.random.Generator):
        sizes = [n_in, *self.config.hidden_widths, n_out]
        self.weights, self.biases = [], []
        for a, b in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / (a + b))
            self.weights.append(rng.uniform(-limit, limit, (a, b)))
            self.biases.append(np.zeros(b))
        self.n_features, self.n_alternatives = n_in, n_out

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for pair in zip(self.weights, self.biases) for p in pair])

    def set_flat(self, theta: np.ndarray):
        k = 0
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = theta[k:k + W.size].reshape(W.shape)
            k += W.size
            self.biases[i] = theta[k:k + b.size].copy()
            k += b.size

    # forward / backward ---------------------------------------------------
    def _forward(self, X, masks=None):
        acts, pre, raw = [X], [], []
        a = X
        for layer, (W, b) in enumerate(zip(self.weights[:-1], self.biases[:-1])):
            z = a @ W + b
            r = _act(self.config.activation, z)
            a = r * masks[layer] if masks is not None else r
            pre.append(z)
            raw.append(r)
            acts.append(a)
        logits = a @ self.weights[-1] + self.biases[-1]
        return acts, (pre, raw), logits

    def loss_and_grad(self, X: np.ndarray, Y: np.ndarray, masks=None):
        """Mean log-loss (+ L2) and gradients as lists matching weights/biases."""
        acts, (pre, raw), logits = self._forward(X, masks)
        P = softmax(logits)
        n = X.shape[0]
        loss = -float(np.sum(Y * np.log(np.maximum(P, PROB_FLOOR)))) / n
        l2 = self.config.l2
        if l2:
            loss += 0.5 * l2 * sum(float(np.sum(W * W)) for W in self.weights)
        gW = [None] * len(self.weights)
        gb = [None] * len(self.biases)
        delta = (P - Y) / n
        for layer in range(len(self.weights) - 1, -1, -1):
            gW[layer] = acts[layer].T @ delta + l2 * self.weights[layer]
            gb[layer] = delta.sum(axis=0)
            if layer:
                back = delta @ self.weights[layer].T
                if masks is not None:
                    back = back * masks[layer - 1]
                delta = back * _act_grad(self.config.activation, pre[layer - 1], raw[layer - 1])
        return loss, gW, gb

    def flat_loss_and_grad(self, theta: np.ndarray, X: np.ndarray, Y: np.ndarray):
        saved = self.get_flat()
        self.set_flat(theta)
        try:
            loss, gW, gb = self.loss_and_grad(X, Y)
        finally:
            self.set_flat(saved)
        return loss, np.concatenate([g.ravel() for pair in zip(gW, gb) for g in pair])

    # training ------------------------------------------------------------
    def fit(self, train: ChoiceDataset) -> "MLP":
        cfg = self.config
        rng = stream(cfg.seed, "fit", "mlp")
        X = train.features
        Y = np.eye(train.n_alternatives)[train.labels]
        self.init_params(X.shape[1], train.n_alternatives, rng)
        if cfg.solver == "bfgs":
            return self._fit_bfgs(X, Y)
        params = [*self.weights, *self.biases]
        m = [np.zeros_like(p) for p in params]
        v = [np.zeros_like(p) for p in params]
        b1, b2, eps = 0.9, 0.999, 1e-8
        step = 0
        best, stall = np.inf, 0
        self.loss_history = []
        n = X.shape[0]
        nw = len(self.weights)
        for epoch in range(cfg.epochs):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                masks = None
                if cfg.dropout_rate > 0:
                    keep = 1.0 - cfg.dropout_rate
                    masks = [(rng.random((idx.size, w)) < keep) / keep for w in cfg.hidden_widths]
                loss, gW, gb = self.loss_and_grad(X[idx], Y[idx], masks)
                if not np.isfinite(loss):
                    raise TrainingError(f"loss diverged (non-finite) at epoch {epoch}; "
                                        f"try a smaller learning rate than {cfg.learning_rate}")
                total += loss * idx.size
                grads = [*gW, *gb]
                step += 1
                for k, (p, g) in enumerate(zip(params, grads)):
                    if cfg.solver == "sgd":
                        p -= cfg.learning_rate * g
                    else:
                        m[k] = b1 * m[k] + (1 - b1) * g
                        v[k] = b2 * v[k] + (1 - b2) * g * g
                        mh = m[k] / (1 - b1 ** step)
                        vh = v[k] / (1 - b2 ** step)
                        p -= cfg.learning_rate * mh / (np.sqrt(vh) + eps)
            epoch_loss = total / n
            self.loss_history.append(epoch_loss)
            if epoch_loss < best - cfg.tolerance:
                best, stall = epoch_loss, 0
            else:
                stall += 1
                if stall >= cfg.patience:
                    break
        self.weights, self.biases = params[:nw], params[nw:]
        return self

    def _fit_bfgs(self, X, Y) -> "MLP":
        # full-batch quasi-Newton; the iteration cap doubles as early stopping
        theta, loss, _, n_iter, _ = bfgs(lambda th: self.flat_loss_and_grad(th, X, Y), self.get_flat(),
                                         tol=self.config.tolerance, max_iter=self.config.max_iter)
        self.set_flat(theta)
        self.loss_history = [loss]
        self.n_iter = n_iter
        return self

    def _proba(self, X):
        return softmax(self._forward(X)[2])

    def _state(self):
        return {
            "config": asdict(self.config),
            "n_alternatives": self.n_alternatives,
            "n_features": self.n_features,
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def _from_state(cls, state):
        m = cls(MLPConfig(**state["config"]))
        m.n_alternatives, m.n_features = state["n_alternatives"], state["n_features"]
        m.weights = [np.asarray(W, dtype=float) for W in state["weights"]]
        m.biases = [np.asarray(b, dtype=float) for b in state["biases"]]
        return m
