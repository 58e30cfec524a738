"""Multi-class gradient boosting with second-order leaf weights.

Each round fits one regression tree per class to the gradient and hessian
of the softmax log-loss at the current scores. Leaf weight is
``-G / (H + l2)`` scaled by the learning rate; split gain is
``0.5 * [G_L^2/(H_L+l2) + G_R^2/(H_R+l2) - G^2/(H+l2)] - gamma``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..data import ChoiceDataset
from ..rng import stream
from ..synthgen import softmax
from .base import PROB_FLOOR, ProbabilisticChoiceModel
from .trees import SplitRules, Tree, grow, presort


@dataclass
class BoostConfig:
    n_rounds: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    min_leaf: int = 1
    min_child_weight: float = 1.0
    l2_reg: float = 1.0
    gamma: float = 0.0
    max_delta_step: float = 0.0
    subsample: float = 1.0
    colsample: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if not 0 < self.subsample <= 1 or not 0 < self.colsample <= 1:
            raise ValueError("subsample and colsample must lie in (0, 1]")
        if self.n_rounds < 0 or self.max_depth < 1:
            raise ValueError("n_rounds >= 0 and max_depth >= 1 required")


def sle_loss(P: np.ndarray, labels: np.ndarray) -> float:
    """Mean squared-log-error between probabilities and one-hot labels (reporting metric only)."""
    Y = np.eye(P.shape[1])[labels]
    return float(np.mean(0.5 * np.sum((np.log1p(P) - np.log1p(Y)) ** 2, axis=1)))


class GradientBoosting(ProbabilisticChoiceModel):
    kind = "boost"

    def __init__(self, config: BoostConfig | None = None):
        self.config = config or BoostConfig()
        self.trees: list[list[Tree]] = []
        self.train_loss: list[float] = []

    def fit(self, train: ChoiceDataset) -> "GradientBoosting":
        cfg = self.config
        X = train.features
        n, p = X.shape
        K = train.n_alternatives
        self.n_features, self.n_alternatives = p, K
        Y = np.eye(K)[train.labels]
        orders = presort(X)
        rules = SplitRules(max_depth=cfg.max_depth, min_leaf=cfg.min_leaf, min_split=2 * cfg.min_leaf,
                           min_child_weight=cfg.min_child_weight, l2=cfg.l2_reg, gamma=cfg.gamma)
        F = np.zeros((n, K))
        self.trees = []
        self.train_loss = [self._loss(F, train.labels)]
        n_cols = max(1, int(round(cfg.colsample * p)))
        for r in range(cfg.n_rounds):
            rng = stream(cfg.seed, "round", r)
            P = softmax(F)
            G = P - Y
            H = np.maximum(P * (1.0 - P), 1e-16)
            w = (rng.random(n) < cfg.subsample).astype(float) if cfg.subsample < 1 else np.ones(n)
            cols = np.sort(rng.permutation(p)[:n_cols]) if n_cols < p else None
            round_trees = []
            for k in range(K):
                S = np.column_stack([G[:, k] * w, H[:, k] * w])
                tree, sums = grow(X, S, w, "xgb", rules, rng=rng, orders=orders, features=cols)
                sums = np.asarray(sums)
                leaf = -sums[:, 0] / (sums[:, 1] + cfg.l2_reg)
                if cfg.max_delta_step > 0:
                    leaf = np.clip(leaf, -cfg.max_delta_step, cfg.max_delta_step)
                tree.value = cfg.learning_rate * leaf
                round_trees.append(tree)
            for k, tree in enumerate(round_trees):
                F[:, k] += tree.predict(X)
            self.trees.append(round_trees)
            self.train_loss.append(self._loss(F, train.labels))
        return self

    @staticmethod
    def _loss(F, labels):
        P = softmax(F)
        return float(-np.mean(np.log(np.maximum(P[np.arange(len(labels)), labels], PROB_FLOOR))))

    def decision_function(self, X) -> np.ndarray:
        F = np.zeros((X.shape[0], self.n_alternatives))
        for round_trees in self.trees:
            for k, tree in enumerate(round_trees):
                F[:, k] += tree.predict(X)
        return F

    def _proba(self, X):
        return softmax(self.decision_function(X))

    def _state(self):
        return {"config": asdict(self.config), "n_alternatives": self.n_alternatives,
                "n_features": self.n_features,
                "trees": [[t.to_dict() for t in rt] for rt in self.trees]}

    @classmethod
    def _from_state(cls, state):
        m = cls(BoostConfig(**state["config"]))
        m.n_alternatives, m.n_features = state["n_alternatives"], state["n_features"]
        m.trees = [[Tree.from_dict(t) for t in rt] for rt in state["trees"]]
        return m
