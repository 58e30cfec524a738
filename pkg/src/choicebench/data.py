"""Choice datasets: container, CSV round-trip, ingestion and normalisation."""

from __future__ import annotations

import logging
import os
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

SYNTHETIC_COLUMNS = ("x1", "I1", "x2", "I2", "x3", "I3")


class DataError(ValueError):
    """Raised for malformed datasets or files."""


@dataclass(frozen=True, eq=False)
class ChoiceDataset:
    """Feature matrix plus chosen alternative per decision maker.

    ``features`` has one row per decision maker. For synthetic data the
    columns follow :data:`SYNTHETIC_COLUMNS`; ingested data carries its own
    ``feature_names``. Labels are 0-based alternative indices.
    """

    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...]
    alternative_names: tuple[str, ...]
    systematic_flag: np.ndarray | None = None
    group_id: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels, dtype=np.int64)
        if X.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        if y.shape != (X.shape[0],):
            raise DataError("labels must have one entry per row")
        if len(self.feature_names) != X.shape[1]:
            raise DataError("feature_names does not match the number of columns")
        if np.isnan(X).any():
            raise DataError("feature matrix contains missing values")
        if y.size and (y.min() < 0 or y.max() >= len(self.alternative_names)):
            raise DataError("label outside 0..n_alternatives-1")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "alternative_names", tuple(self.alternative_names))
        if self.systematic_flag is not None:
            flag = np.asarray(self.systematic_flag, dtype=bool)
            if flag.shape != y.shape:
                raise DataError("systematic_flag must have one entry per row")
            object.__setattr__(self, "systematic_flag", flag)
        if self.group_id is not None:
            g = np.asarray(self.group_id)
            if g.shape != y.shape:
                raise DataError("group_id must have one entry per row")
            object.__setattr__(self, "group_id", g)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_alternatives(self) -> int:
        return len(self.alternative_names)

    def column(self, name: str) -> int:
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise DataError(f"unknown column {name!r}") from None

    def subset(self, rows) -> "ChoiceDataset":
        rows = np.asarray(rows)
        return replace(
            self,
            features=self.features[rows],
            labels=self.labels[rows],
            systematic_flag=None if self.systematic_flag is None else self.systematic_flag[rows],
            group_id=None if self.group_id is None else self.group_id[rows],
        )

    def with_features(self, features: np.ndarray, feature_names: Sequence[str] | None = None) -> "ChoiceDataset":
        return replace(self, features=features,
                       feature_names=tuple(feature_names) if feature_names is not None else self.feature_names)

    def label_shares(self) -> np.ndarray:
        """Observed choice shares in percent."""
        return 100.0 * np.bincount(self.labels, minlength=self.n_alternatives) / len(self)


def groups_or_rows(dataset: ChoiceDataset) -> np.ndarray:
    """Group key per row; rows without a group id become singleton groups."""
    n = len(dataset)
    if dataset.group_id is None:
        return np.arange(n).astype(str).astype(object)
    g = dataset.group_id.astype(object)
    missing = pd.isna(pd.Series(g)).to_numpy()
    out = np.array([f"g:{v}" for v in g], dtype=object)
    out[missing] = [f"row:{i}" for i in np.flatnonzero(missing)]
    return out


# ---------------------------------------------------------------- CSV I/O

def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def to_frame(dataset: ChoiceDataset) -> pd.DataFrame:
    df = pd.DataFrame(dataset.features, columns=list(dataset.feature_names))
    df["label"] = dataset.labels
    if dataset.group_id is not None:
        df["group_id"] = dataset.group_id
    if dataset.systematic_flag is not None:
        df["systematic_flag"] = dataset.systematic_flag.astype(int)
    return df


def write_csv(dataset: ChoiceDataset, path: str | os.PathLike) -> None:
    atomic_write_text(path, to_frame(dataset).to_csv(index=False, float_format="%.17g"))


def read_csv(path: str | os.PathLike, alternative_names: Sequence[str] | None = None,
             name: str = "") -> ChoiceDataset:
    """Read a file written by :func:`write_csv`."""
    df = pd.read_csv(path)
    if "label" not in df.columns:
        raise DataError(f"{path}: missing 'label' column")
    extra = {"label", "group_id", "systematic_flag"}
    cols = [c for c in df.columns if c not in extra]
    labels = df["label"].to_numpy(dtype=np.int64)
    if alternative_names is None:
        alternative_names = [str(i + 1) for i in range(int(labels.max()) + 1)]
    return ChoiceDataset(
        features=df[cols].to_numpy(dtype=float),
        labels=labels,
        feature_names=tuple(cols),
        alternative_names=tuple(alternative_names),
        systematic_flag=df["systematic_flag"].to_numpy().astype(bool) if "systematic_flag" in df else None,
        group_id=df["group_id"].to_numpy() if "group_id" in df else None,
        name=name or Path(path).stem,
    )


@dataclass
class CsvSchema:
    """Column roles for :func:`ingest_csv`.

    ``categorical`` columns are one-hot encoded into ``<col>_<level>``
    columns. ``labels`` optionally fixes the label order; otherwise sorted
    unique values are used.
    """

    attributes: list[str]
    label: str
    group: str | None = None
    categorical: list[str] = field(default_factory=list)
    labels: list | None = None
    split: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "CsvSchema":
        return cls(**d)


def ingest_csv(path: str | os.PathLike, schema: CsvSchema) -> ChoiceDataset:
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    df = pd.read_csv(path)
    needed = list(schema.attributes) + [schema.label]
    needed += [c for c in (schema.group, schema.split) if c]
    missing = [c for c in needed if c not in df.columns]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")

    blocks, names = [], []
    for col in schema.attributes:
        if col in schema.categorical:
            levels = sorted(df[col].dropna().unique().tolist(), key=str)
            for lv in levels:
                blocks.append((df[col] == lv).to_numpy(dtype=float))
                names.append(f"{col}_{lv}")
            if df[col].isna().any():
                row = int(np.flatnonzero(df[col].isna().to_numpy())[0])
                raise DataError(f"{path}: empty cell at row {row + 1}, column {col!r}")
            continue
        values = pd.to_numeric(df[col], errors="coerce")
        bad = values.isna().to_numpy()
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise DataError(f"{path}: unparseable cell {df[col].iloc[row]!r} at row {row + 1}, column {col!r}")
        blocks.append(values.to_numpy(dtype=float))
        names.append(col)

    raw_labels = df[schema.label].to_numpy()
    order = list(schema.labels) if schema.labels is not None else sorted(pd.unique(raw_labels).tolist(), key=str)
    index = {v: i for i, v in enumerate(order)}
    try:
        labels = np.array([index[v] for v in raw_labels], dtype=np.int64)
    except KeyError as exc:
        raise DataError(f"{path}: label value {exc.args[0]!r} not in declared labels") from None

    return ChoiceDataset(
        features=np.column_stack(blocks) if blocks else np.empty((len(df), 0)),
        labels=labels,
        feature_names=tuple(names),
        alternative_names=tuple(str(v) for v in order),
        group_id=df[schema.group].to_numpy() if schema.group else None,
        name=path.stem,
    )


# ---------------------------------------------------------- normalisation

@dataclass
class NormalisationState:
    columns: list[str]
    mean: np.ndarray
    std: np.ndarray
    dropped: list[str] = field(default_factory=list)

    def apply(self, dataset: ChoiceDataset) -> ChoiceDataset:
        idx = [dataset.column(c) for c in self.columns]
        X = (dataset.features[:, idx] - self.mean) / self.std
        return dataset.with_features(X, self.columns)

    def invert(self, features: np.ndarray) -> np.ndarray:
        return features * self.std + self.mean

    def to_dict(self) -> dict:
        return {"columns": self.columns, "mean": self.mean.tolist(),
                "std": self.std.tolist(), "dropped": self.dropped}


def normalise(train: ChoiceDataset, test: ChoiceDataset | None = None):
    """Standardise both splits with statistics of ``train`` only.

    Zero-variance training columns are dropped (and logged).
    Returns ``(train', test', state)``.
    """
    if len(train) == 0:
        raise DataError("cannot normalise an empty training set")
    mean = train.features.mean(axis=0)
    std = train.features.std(axis=0)
    keep = std > 0
    dropped = [c for c, k in zip(train.feature_names, keep) if not k]
    if dropped:
        log.warning("dropping zero-variance columns: %s", ", ".join(dropped))
    state = NormalisationState(
        columns=[c for c, k in zip(train.feature_names, keep) if k],
        mean=mean[keep], std=std[keep], dropped=dropped,
    )
    return state.apply(train), (state.apply(test) if test is not None else None), state
