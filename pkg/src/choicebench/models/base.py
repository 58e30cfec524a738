from __future__ import annotations

import abc
from typing import Any, ClassVar

import numpy as np

from ..data import ChoiceDataset

PROB_FLOOR = 1e-15
FORMAT_VERSION = 1


class NotFittedError(RuntimeError):
    pass


class TrainingError(RuntimeError):
    """Estimation failed (divergence, non-convergence reported as error)."""


class ProbabilisticChoiceModel(abc.ABC):
    """Uniform fit / predict_proba interface shared by every estimator.

    ``predict_proba`` accepts a single feature row (returns a vector) or a
    matrix (returns one probability vector per row).
    """

    kind: ClassVar[str] = ""

    n_alternatives: int | None = None
    n_features: int | None = None

    @abc.abstractmethod
    def fit(self, train: ChoiceDataset) -> "ProbabilisticChoiceModel": ...

    @abc.abstractmethod
    def _proba(self, X: np.ndarray) -> np.ndarray: ...

    def predict_proba(self, X) -> np.ndarray:
        if self.n_alternatives is None:
            raise NotFittedError(f"{type(self).__name__} is not fitted")
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        P = self._proba(X)
        return P[0] if single else P

    def predict(self, X) -> np.ndarray:
        # np.argmax returns the first maximum: ties go to the lowest index
        return np.argmax(self.predict_proba(X), axis=-1)

    # persistence -------------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        return {"type": self.kind, "version": FORMAT_VERSION, **self._state()}

    def _state(self) -> dict[str, Any]:
        raise NotImplementedError

    @classmethod
    def _from_state(cls, state: dict[str, Any]) -> "ProbabilisticChoiceModel":
        raise NotImplementedError


class UniformModel(ProbabilisticChoiceModel):
    """Predicts equal probability for every alternative."""

    kind = "uniform"

    def fit(self, train):
        self.n_alternatives = train.n_alternatives
        self.n_features = train.features.shape[1]
        return self

    def _proba(self, X):
        return np.full((X.shape[0], self.n_alternatives), 1.0 / self.n_alternatives)

    def _state(self):
        return {"n_alternatives": self.n_alternatives, "n_features": self.n_features}

    @classmethod
    def _from_state(cls, state):
        m = cls()
        m.n_alternatives, m.n_features = state["n_alternatives"], state["n_features"]
        return m
