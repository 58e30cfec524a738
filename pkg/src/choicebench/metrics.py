"""Accuracy, GMPCA and market-share indicators computed from predicted probabilities."""

from __future__ import annotations

import io
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd

from .data import ChoiceDataset, atomic_write_text
from .models.base import PROB_FLOOR, ProbabilisticChoiceModel
from .synthgen import S2_SHIFT, S3_SCALE, Scenario, apply_scenario_features


def _check_nonempty(dataset: ChoiceDataset):
    if len(dataset) == 0:
        raise ValueError("metrics are undefined on an empty dataset")


def chosen_log_prob(model: ProbabilisticChoiceModel, dataset: ChoiceDataset) -> np.ndarray:
    _check_nonempty(dataset)
    P = model.predict_proba(dataset.features)
    return np.log(np.maximum(P[np.arange(len(dataset)), dataset.labels], PROB_FLOOR))


def accuracy(model: ProbabilisticChoiceModel, dataset: ChoiceDataset) -> float:
    """Percentage of rows whose most probable alternative is the chosen one."""
    _check_nonempty(dataset)
    return 100.0 * float(np.mean(model.predict(dataset.features) == dataset.labels))


def cross_entropy(model: ProbabilisticChoiceModel, dataset: ChoiceDataset) -> float:
    """Mean of -log P(chosen), probabilities floored at 1e-15."""
    return -float(np.mean(chosen_log_prob(model, dataset)))


def gmpca(model: ProbabilisticChoiceModel, dataset: ChoiceDataset) -> float:
    """Geometric mean probability of the chosen alternative, in percent."""
    return 100.0 * float(np.exp(np.mean(chosen_log_prob(model, dataset))))


def apply_scenario(dataset: ChoiceDataset, scenario: Scenario | str) -> ChoiceDataset:
    """Counterfactual features: S1 identity, S2 shifts and S3 scales alternative 1."""
    if dataset.features.shape[1] != S2_SHIFT.size:
        raise ValueError("scenarios are defined for the 6-column synthetic layout; "
                         "use shift_columns for other datasets")
    return dataset.with_features(apply_scenario_features(dataset.features, scenario))


def shift_columns(dataset: ChoiceDataset, shift: dict[str, float] | None = None,
                  scale: dict[str, float] | None = None) -> ChoiceDataset:
    """Generic counterfactual: ``x * scale + shift`` on named columns."""
    F = dataset.features.copy()
    for name, c in (scale or {}).items():
        F[:, dataset.column(name)] *= c
    for name, c in (shift or {}).items():
        F[:, dataset.column(name)] += c
    return dataset.with_features(F)


def outside_unit_cube(features: np.ndarray) -> float:
    """Fraction of rows with at least one feature outside [0, 1]."""
    F = np.asarray(features)
    return float(np.mean(np.any((F < 0) | (F > 1), axis=1)))


def market_shares(model: ProbabilisticChoiceModel, dataset: ChoiceDataset) -> np.ndarray:
    """Average predicted probability per alternative, in percent."""
    _check_nonempty(dataset)
    return 100.0 * model.predict_proba(dataset.features).mean(axis=0)


def share_error(ms, ms_star) -> float:
    """Mean absolute difference between two share vectors (percentage points)."""
    ms, ms_star = np.asarray(ms, dtype=float), np.asarray(ms_star, dtype=float)
    if ms.shape != ms_star.shape:
        raise ValueError(f"share vectors differ in length: {ms.size} vs {ms_star.size}")
    return float(np.mean(np.abs(ms - ms_star)))


@dataclass
class MetricReport:
    model: str
    dataset: str
    accuracy: float
    gmpca: float
    n_rows: int

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 100.0:
            raise ValueError("accuracy must lie in [0, 100]")
        if not 0.0 < self.gmpca <= 100.0:
            raise ValueError("gmpca must lie in (0, 100]")


def evaluate(model: ProbabilisticChoiceModel, dataset: ChoiceDataset, model_name: str = "") -> MetricReport:
    return MetricReport(model_name or model.kind, dataset.name, accuracy(model, dataset),
                        gmpca(model, dataset), len(dataset))


def reports_to_frame(reports: list[MetricReport]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in reports])


def write_reports_csv(reports: list[MetricReport], path) -> None:
    buf = io.StringIO()
    reports_to_frame(reports).to_csv(buf, index=False, float_format="%.6f")
    atomic_write_text(path, buf.getvalue())


__all__ = ["MetricReport", "S2_SHIFT", "S3_SCALE", "Scenario", "accuracy", "apply_scenario", "chosen_log_prob",
           "cross_entropy", "evaluate", "gmpca", "market_shares", "outside_unit_cube", "reports_to_frame",
           "share_error", "shift_columns", "write_reports_csv"]
