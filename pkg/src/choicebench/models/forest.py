from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..data import ChoiceDataset
from ..rng import stream
from .base import ProbabilisticChoiceModel
from .trees import SplitRules, Tree, grow, presort


@dataclass
class ForestConfig:
    n_trees: int = 100
    max_features: int | None = 2
    max_depth: int = 10
    min_leaf: int = 5
    min_split: int = 10
    criterion: str = "gini"
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        self.criterion = self.criterion.lower()
        if self.n_trees < 1 or self.max_depth < 1:
            raise ValueError("n_trees and max_depth must be >= 1")
        if self.min_leaf < 1 or self.min_split < 2:
            raise ValueError("min_leaf >= 1 and min_split >= 2 required")
        if self.criterion not in ("gini", "entropy"):
            raise ValueError(f"unknown criterion {self.criterion!r}")
        if self.max_features is not None and self.max_features < 1:
            raise ValueError("max_features must be >= 1")


class RandomForest(ProbabilisticChoiceModel):
    """Bagged classification trees with random feature subsets at each split.

    Leaves store class frequencies; the forest probability is their average.
    Tree ``b`` draws from its own stream, so results do not depend on the
    order trees are built in.
    """

    kind = "forest"

    def __init__(self, config: ForestConfig | None = None):
        self.config = config or ForestConfig()
        self.trees: list[Tree] = []

    def fit(self, train: ChoiceDataset) -> "RandomForest":
        cfg = self.config
        X = train.features
        n, p = X.shape
        if cfg.max_features is not None and cfg.max_features > p:
            raise ValueError(f"max_features={cfg.max_features} exceeds {p} features")
        self.n_features, self.n_alternatives = p, train.n_alternatives
        Y = np.eye(train.n_alternatives)[train.labels]
        orders = presort(X)
        rules = SplitRules(max_depth=cfg.max_depth, min_leaf=cfg.min_leaf, min_split=cfg.min_split,
                           max_features=cfg.max_features)
        self.trees = []
        for b in range(cfg.n_trees):
            rng = stream(cfg.seed, "tree", b)
            w = np.bincount(rng.integers(0, n, n), minlength=n).astype(float) if cfg.bootstrap else np.ones(n)
            tree, sums = grow(X, Y * w[:, None], w, cfg.criterion, rules, rng=rng, orders=orders)
            counts = np.asarray(sums)
            tree.value = counts / counts.sum(axis=1, keepdims=True)
            self.trees.append(tree)
        return self

    def _proba(self, X):
        P = np.zeros((X.shape[0], self.n_alternatives))
        for tree in self.trees:
            P += tree.predict(X)
        return P / len(self.trees)

    def _state(self):
        return {"config": asdict(self.config), "n_alternatives": self.n_alternatives,
                "n_features": self.n_features, "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def _from_state(cls, state):
        m = cls(ForestConfig(**state["config"]))
        m.n_alternatives, m.n_features = state["n_alternatives"], state["n_features"]
        m.trees = [Tree.from_dict(t) for t in state["trees"]]
        return m
