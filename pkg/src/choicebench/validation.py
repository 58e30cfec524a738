"""Group-aware splitting and cross-validation.

All rows sharing a group id (for example one household's trips) land on
the same side of every split. Rows without a group id are their own group.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import ChoiceDataset, groups_or_rows
from .metrics import cross_entropy
from .models.base import PROB_FLOOR, ProbabilisticChoiceModel
from .rng import stream

ModelFactory = Callable[[dict], ProbabilisticChoiceModel]


class FoldError(RuntimeError):
    """Training or scoring failed inside one cross-validation fold."""

    def __init__(self, fold: int, cause: Exception):
        super().__init__(f"fold {fold}: {type(cause).__name__}: {cause}")
        self.fold = fold
        self.cause = cause


def _group_index(dataset: ChoiceDataset) -> tuple[np.ndarray, np.ndarray]:
    """(sorted unique group keys, per-row index into them)."""
    keys = groups_or_rows(dataset)
    uniq, inv = np.unique(keys.astype(str), return_inverse=True)
    return uniq, inv


def grouped_split(dataset: ChoiceDataset, test_fraction: float = 0.3, seed: int = 0
                  ) -> tuple[ChoiceDataset, ChoiceDataset]:
    """Random train/test partition of whole groups.

    Groups are shuffled and the prefix whose row count is closest to the
    target goes to the test side.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    uniq, inv = _group_index(dataset)
    if uniq.size < 2:
        raise ValueError("a dataset with a single group cannot be split")
    sizes = np.bincount(inv, minlength=uniq.size)
    order = stream(seed, "split").permutation(uniq.size)
    cum = np.cumsum(sizes[order])
    target = test_fraction * len(dataset)
    # at least one group on each side
    n_test = int(np.argmin(np.abs(cum[:-1] - target))) + 1
    in_test = np.zeros(uniq.size, dtype=bool)
    in_test[order[:n_test]] = True
    test_rows = in_test[inv]
    return dataset.subset(np.flatnonzero(~test_rows)), dataset.subset(np.flatnonzero(test_rows))


@dataclass(frozen=True)
class FoldAssignment:
    fold: np.ndarray
    k: int

    def __post_init__(self):
        f = np.asarray(self.fold, dtype=np.int64)
        if f.size and (f.min() < 0 or f.max() >= self.k):
            raise ValueError("fold index out of range")
        object.__setattr__(self, "fold", f)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold, minlength=self.k)

    def split(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """(training rows, held-out rows) for fold ``k``."""
        return np.flatnonzero(self.fold != k), np.flatnonzero(self.fold == k)

    def __iter__(self):
        for k in range(self.k):
            yield self.split(k)


def grouped_kfold(dataset: ChoiceDataset, k: int = 5, seed: int = 0) -> FoldAssignment:
    """Assign whole groups to ``k`` folds of near-equal row count.

    Groups are shuffled, then placed largest first into the currently
    smallest fold (ties to the lowest fold index). With singleton groups
    this deals rows round-robin, giving sizes that differ by at most one.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    uniq, inv = _group_index(dataset)
    if uniq.size < k:
        raise ValueError(f"need at least {k} groups, found {uniq.size}")
    sizes = np.bincount(inv, minlength=uniq.size)
    order = stream(seed, "folds").permutation(uniq.size)
    order = order[np.argsort(-sizes[order], kind="stable")]
    load = np.zeros(k, dtype=np.int64)
    group_fold = np.empty(uniq.size, dtype=np.int64)
    for g in order:
        f = int(np.argmin(load))
        group_fold[g] = f
        load[f] += sizes[g]
    return FoldAssignment(group_fold[inv], k)


@dataclass
class CVResult:
    fold_scores: list[float]
    oof_proba: np.ndarray

    @property
    def score(self) -> float:
        return float(np.mean(self.fold_scores))


def cross_validate(factory: ModelFactory, params: dict, dataset: ChoiceDataset, folds: FoldAssignment,
                   scorer=cross_entropy) -> CVResult:
    """Fit on each fold's complement and score on the held-out fold.

    Out-of-fold probabilities are kept so pooled metrics can be computed.
    """
    oof = np.zeros((len(dataset), dataset.n_alternatives))
    scores = []
    for k, (tr, va) in enumerate(folds):
        try:
            model = factory(dict(params)).fit(dataset.subset(tr))
            held = dataset.subset(va)
            scores.append(float(scorer(model, held)))
            oof[va] = model.predict_proba(held.features)
        except Exception as exc:
            raise FoldError(k, exc) from exc
    return CVResult(scores, oof)


def cv_score(factory: ModelFactory, params: dict, dataset: ChoiceDataset, folds: FoldAssignment) -> float:
    """Mean held-out cross-entropy over the folds."""
    return cross_validate(factory, params, dataset, folds).score


def pooled_metrics(oof_proba: np.ndarray, labels: np.ndarray) -> dict[str, float]:
    """Accuracy and GMPCA (percent) of out-of-fold predictions over all rows."""
    p = np.maximum(oof_proba[np.arange(labels.size), labels], PROB_FLOOR)
    return {"accuracy": 100.0 * float(np.mean(np.argmax(oof_proba, axis=1) == labels)),
            "gmpca": 100.0 * float(np.exp(np.mean(np.log(p))))}


__all__ = ["CVResult", "FoldAssignment", "FoldError", "cross_validate", "cv_score", "grouped_kfold",
           "grouped_split", "pooled_metrics"]
