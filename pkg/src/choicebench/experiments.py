"""Experiment runners producing table-shaped CSV reports.

Every runner takes an :class:`ExperimentConfig`, writes into
``<out>/<experiment>-<config hash>/`` and returns that directory. Seeds
for data, folds, fits and searches are derived from the master seed by
purpose name, so adding a model or dataset leaves the others unchanged
and re-running an unchanged config rewrites identical files.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .behavioural import (CANONICAL_INDIVIDUAL, CANONICAL_SWEEP_ATTR, IndicatorConfig, extrapolation_grid,
                          interpolation_grid, probability_sweep, summarise_wtp, vot, wtp_population)
from .data import ChoiceDataset, CsvSchema, atomic_write_text, ingest_csv, normalise
from .hpo import DEFAULT_SPACES, DESK_BUDGET, SearchSpace, search
from .metrics import accuracy, apply_scenario, gmpca, market_shares, share_error, shift_columns
from .models import MNLSpec, ProbabilisticChoiceModel, build_model
from .rng import child_seed
from .synthgen import Scenario, SyntheticConfig, canonical_configs, generate, max_accuracy, true_market_shares
from .validation import FoldAssignment, cross_validate, grouped_kfold, grouped_split, pooled_metrics

log = logging.getLogger(__name__)

DEFAULT_SEED = 2024
DEFAULT_MODELS = ("mnl", "nn", "dnn", "rf", "gbdt")
EXPERIMENTS = ("exp1", "exp2", "exp3", "real")
FLOAT_FORMAT = "%.6f"

# display names for table headers
LABELS = {"mnl": "MNL", "nn": "NN", "dnn": "DNN", "rf": "RF", "gbdt": "XGBoost", "uniform": "Uniform"}


@dataclass
class ModelEntry:
    name: str
    params: dict = field(default_factory=dict)
    space: dict | None = None   # search space; None uses the built-in one when HPO is on

    @property
    def label(self) -> str:
        return LABELS.get(self.name, self.name)


@dataclass
class RealDataConfig:
    path: str
    schema: dict
    test_fraction: float = 0.3
    split_test_value: str = "test"
    vot: list[dict] = field(default_factory=list)        # {"name", "time", "cost", "alternative"}
    scenarios: dict = field(default_factory=dict)        # name -> {"shift": {...}, "scale": {...}}
    mnl_spec: dict | None = None


@dataclass
class ExperimentConfig:
    experiment: str = "exp1"
    datasets: list[str] = field(default_factory=list)    # synthetic slugs; empty means all twelve
    models: list[ModelEntry] = field(default_factory=lambda: [ModelEntry(m) for m in DEFAULT_MODELS])
    seed: int = DEFAULT_SEED
    n_train: int = 10_000
    n_test: int = 1_000
    cv_folds: int = 5
    hpo_method: str = "none"                             # none | random | tpe
    budget: int = DESK_BUDGET
    share_draws: int = 1_000_000
    probit_draws: int = 100_000
    out: str = "runs"
    real: RealDataConfig | None = None

    def __post_init__(self):
        self.experiment = _normalise_experiment(self.experiment)
        self.models = [m if isinstance(m, ModelEntry) else
                       ModelEntry(m) if isinstance(m, str) else ModelEntry(**m) for m in self.models]
        if isinstance(self.real, dict):
            self.real = RealDataConfig(**self.real)
        if not self.models:
            raise ValueError("at least one model is required")
        if self.hpo_method not in ("none", "random", "tpe"):
            raise ValueError(f"unknown hpo_method {self.hpo_method!r}")
        if self.experiment == "real":
            if self.real is None:
                raise ValueError("the real-data experiment needs a 'real' section")
            if not Path(self.real.path).exists():
                raise FileNotFoundError(f"dataset file not found: {self.real.path} (datasets are not bundled)")
        known = {c.slug for c in canonical_configs()}
        unknown = [d for d in self.datasets if d not in known]
        if unknown:
            raise ValueError(f"unknown datasets {unknown}; choose from {sorted(known)}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def digest(self) -> str:
        d = self.to_dict()
        d.pop("out")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]

    def run_dir(self) -> Path:
        return Path(self.out) / f"{self.experiment}-{self.digest()}"

    def synthetic_configs(self) -> list[SyntheticConfig]:
        cfgs = canonical_configs(child_seed(self.seed, "data"), self.n_train, self.n_test)
        if self.datasets:
            by_slug = {c.slug: c for c in cfgs}
            return [by_slug[s] for s in self.datasets]
        return cfgs


def _normalise_experiment(e) -> str:
    e = str(e).lower()
    e = {"1": "exp1", "2": "exp2", "3": "exp3"}.get(e, e)
    if e not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {e!r}")
    return e


# ---------------------------------------------------------------- helpers

def _write_frame(df: pd.DataFrame, path: Path) -> None:
    buf = io.StringIO()
    df.to_csv(buf, index=False, float_format=FLOAT_FORMAT)
    atomic_write_text(path, buf.getvalue())


def _prepare_dir(cfg: ExperimentConfig) -> Path:
    d = cfg.run_dir()
    d.mkdir(parents=True, exist_ok=True)
    atomic_write_text(d / "config.json", json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    atomic_write_text(d / "metadata.json", json.dumps(
        {"package_version": __version__, "experiment": cfg.experiment, "seed": cfg.seed,
         "config_hash": cfg.digest()}, indent=2))
    return d


def model_params(entry: ModelEntry, n_features: int) -> dict:
    params = dict(entry.params)
    if entry.name in ("rf", "forest"):
        params.setdefault("max_features", min(2, n_features))
    return params


def tune(entry: ModelEntry, train: ChoiceDataset, folds: FoldAssignment, cfg: ExperimentConfig,
         seed: int, factory, out_json: Path | None = None) -> dict:
    """Search hyperparameters on ``train`` by mean CV cross-entropy; returns the merged params."""
    base = model_params(entry, train.features.shape[1])
    if cfg.hpo_method == "none" or entry.name in ("mnl", "uniform"):
        return base
    space_dict = dict(entry.space if entry.space is not None else DEFAULT_SPACES.get(entry.name, {}))
    if entry.name in ("rf", "forest") and "max_features" in space_dict and entry.space is None:
        space_dict["max_features"] = {"type": "int", "low": min(2, train.features.shape[1]),
                                      "high": train.features.shape[1]}
    space = SearchSpace.from_dict(space_dict)

    def objective(params):
        try:
            res = cross_validate(factory, {**base, **params}, train, folds)
        except Exception as exc:  # a diverging configuration is just a bad trial
            log.warning("trial failed: %s", exc)
            return math.inf
        return res.score, res.fold_scores

    result = search(cfg.hpo_method, space, cfg.budget, objective, seed)
    if out_json is not None:
        result.write_json(out_json)
    return {**base, **result.best.params}


def _factory(entry: ModelEntry, seed: int, mnl_spec: MNLSpec | None = None):
    def make(params: dict) -> ProbabilisticChoiceModel:
        if entry.name == "mnl" and mnl_spec is not None and "spec" not in params:
            params = {**params, "spec": mnl_spec.to_dict()}
        return build_model(entry.name, params, seed=seed)
    return make


@dataclass
class FittedCell:
    dataset: str
    model: str
    params: dict
    cv: dict
    fitted: ProbabilisticChoiceModel


def fit_cell(entry: ModelEntry, train: ChoiceDataset, cfg: ExperimentConfig, key: str, run_dir: Path | None,
             mnl_spec: MNLSpec | None = None, with_cv: bool = True) -> FittedCell:
    """Tune (optionally), cross-validate and fit one model on one training set."""
    seed = child_seed(cfg.seed, "fit", entry.name, key)
    factory = _factory(entry, seed, mnl_spec)
    folds = grouped_kfold(train, cfg.cv_folds, child_seed(cfg.seed, "folds", key))
    hpo_path = None
    if run_dir is not None and cfg.hpo_method != "none":
        (run_dir / "hpo").mkdir(exist_ok=True)
        hpo_path = run_dir / "hpo" / f"{key}__{entry.name}.json"
    params = tune(entry, train, folds, cfg, child_seed(cfg.seed, "hpo", entry.name, key), factory, hpo_path)
    cv = {}
    if with_cv:
        res = cross_validate(factory, params, train, folds)
        cv = {**pooled_metrics(res.oof_proba, train.labels), "cross_entropy": res.score}
    t = time.perf_counter()
    model = factory(dict(params)).fit(train)
    log.info("%s / %s fitted in %.1fs", key, entry.name, time.perf_counter() - t)
    return FittedCell(key, entry.name, params, cv, model)


# ------------------------------------------------------------ experiment 1

def run_experiment1(cfg: ExperimentConfig) -> Path:
    """CV and test accuracy/GMPCA per dataset and model, plus maximum accuracy."""
    out = _prepare_dir(cfg)
    rows = []
    for sc in cfg.synthetic_configs():
        train, test = generate(sc)
        for entry in cfg.models:
            cell = fit_cell(entry, train, cfg, sc.slug, out)
            rows.append({"dataset": sc.slug, "model": entry.label,
                         "cv_accuracy": cell.cv["accuracy"], "cv_gmpca": cell.cv["gmpca"],
                         "test_accuracy": accuracy(cell.fitted, test), "test_gmpca": gmpca(cell.fitted, test),
                         "max_accuracy_train": max_accuracy(train), "max_accuracy_test": max_accuracy(test)})
    long = pd.DataFrame(rows)
    _write_frame(long, out / "exp1_results.csv")
    for split in ("cv", "test"):
        _write_frame(_wide(long, split), out / f"table_{split}.csv")
    return out


def _wide(long: pd.DataFrame, split: str) -> pd.DataFrame:
    """One row per dataset; columns '<model> Accuracy', '<model> GMPCA', 'Maximum'."""
    maxcol = "max_accuracy_train" if split == "cv" else "max_accuracy_test"
    frames = []
    for model, g in long.groupby("model", sort=False):
        frames.append(g.set_index("dataset")[[f"{split}_accuracy", f"{split}_gmpca"]]
                      .rename(columns={f"{split}_accuracy": f"{model} Accuracy", f"{split}_gmpca": f"{model} GMPCA"}))
    wide = pd.concat(frames, axis=1)
    wide["Maximum"] = long.groupby("dataset", sort=False)[maxcol].first()
    return wide.reset_index()


# ------------------------------------------------------------ experiment 2

def run_experiment2(cfg: ExperimentConfig) -> Path:
    """Probability curves of the canonical individual as alternative 2's income varies."""
    out = _prepare_dir(cfg)
    (out / "sweeps").mkdir(exist_ok=True)
    rows = []
    for sc in cfg.synthetic_configs():
        train, _ = generate(sc)
        gt = sc.ground_truth
        for entry in cfg.models:
            cell = fit_cell(entry, train, cfg, sc.slug, out, with_cv=False)
            for tag, grid in (("interpolation", interpolation_grid()), ("extrapolation", extrapolation_grid())):
                sw = probability_sweep(cell.fitted, CANONICAL_INDIVIDUAL, CANONICAL_SWEEP_ATTR, grid, truth=gt,
                                       alternative_names=train.alternative_names, n_draws=cfg.probit_draws,
                                       seed=child_seed(cfg.seed, "mc", "sweep"))
                sw.write_csv(out / "sweeps" / f"{sc.slug}__{entry.name}__{tag}.csv")
                rows.append({"dataset": sc.slug, "model": entry.label, "range": tag,
                             "max_gap_unit_interval": sw.max_gap(0.0, 1.0), "max_gap": sw.max_gap(),
                             "distinct_values_alt1": sw.n_distinct(0)})
    _write_frame(pd.DataFrame(rows), out / "sweep_summary.csv")
    return out


# ------------------------------------------------------------ experiment 3

def true_wtp_median(sc: SyntheticConfig) -> float:
    """Population median of the true WTP for alternative 1 (uniform attributes)."""
    # linear: constant ratio; Cobb-Douglas: (bx/bI) * I/x and median(I/x) = 1
    return sc.utility.beta_x / sc.utility.beta_I


def wtp_config() -> IndicatorConfig:
    return IndicatorConfig(target_attr="x1", income_attr="I1", alternative=0)


def run_experiment3(cfg: ExperimentConfig) -> Path:
    """Scenario market shares against Monte Carlo truth, and WTP population reports."""
    out = _prepare_dir(cfg)
    (out / "wtp").mkdir(exist_ok=True)
    truth_rows, share_rows, wtp_rows = [], [], []
    for sc in cfg.synthetic_configs():
        train, test = generate(sc)
        gt = sc.ground_truth
        truth = {}
        for s in Scenario:
            if s is Scenario.S1:
                truth[s] = np.full(3, 100.0 / 3.0)
            else:
                truth[s] = true_market_shares(gt, s, cfg.share_draws, seed=child_seed(cfg.seed, "mc", "shares"))
        truth_rows.append({"dataset": sc.slug, **{f"{s.value}_alt{j + 1}": truth[s][j]
                                                  for s in (Scenario.S2, Scenario.S3) for j in range(3)}})
        for entry in cfg.models:
            cell = fit_cell(entry, train, cfg, sc.slug, out, with_cv=False)
            row = {"dataset": sc.slug, "model": entry.label}
            for s in Scenario:
                ms = market_shares(cell.fitted, apply_scenario(test, s))
                row.update({f"{s.value}_alt{j + 1}": ms[j] for j in range(3)})
                row[f"{s.value}_error"] = share_error(ms, truth[s])
            share_rows.append(row)
            rep = wtp_population(cell.fitted, train, wtp_config())
            rep.write(out / "wtp" / f"{sc.slug}__{entry.name}.json", out / "wtp" / f"{sc.slug}__{entry.name}.csv")
            wtp_rows.append({"dataset": sc.slug, "model": entry.label, "true_median": true_wtp_median(sc),
                             "median": rep.median, "q1": rep.q1, "q3": rep.q3,
                             "invalid_percent": rep.invalid_fraction, "consistent": rep.consistent})
    shares = pd.DataFrame(share_rows)
    _write_frame(pd.DataFrame(truth_rows), out / "true_shares.csv")
    _write_frame(shares, out / "market_shares.csv")
    errors = shares.pivot(index="dataset", columns="model", values=[f"{s.value}_error" for s in Scenario])
    errors.columns = [f"{m} {c.split('_')[0]}" for c, m in errors.columns]
    order = [f"{e.label} {s.value}" for e in cfg.models for s in Scenario]
    errors = errors[order].reindex([c.slug for c in cfg.synthetic_configs()])
    _write_frame(errors.reset_index(), out / "share_errors.csv")
    _write_frame(pd.DataFrame(wtp_rows), out / "wtp_summary.csv")
    return out


# -------------------------------------------------------------- real data

def load_real(rc: RealDataConfig, seed: int) -> tuple[ChoiceDataset, ChoiceDataset]:
    """Ingest and split: a declared split column wins, otherwise a grouped random split."""
    schema = CsvSchema.from_dict(rc.schema)
    data = ingest_csv(rc.path, schema)
    if schema.split:
        flag = pd.read_csv(rc.path, usecols=[schema.split])[schema.split].astype(str).to_numpy()
        is_test = flag == str(rc.split_test_value)
        if is_test.all() or not is_test.any():
            raise ValueError(f"split column {schema.split!r} must mark some but not all rows as "
                             f"{rc.split_test_value!r}")
        return data.subset(np.flatnonzero(~is_test)), data.subset(np.flatnonzero(is_test))
    return grouped_split(data, rc.test_fraction, child_seed(seed, "split"))


def default_real_spec(feature_names) -> MNLSpec:
    """Every attribute with alternative-specific coefficients (first alternative as reference)."""
    return MNLSpec(individual_specific=list(feature_names))


def run_real(cfg: ExperimentConfig) -> Path:
    """Ingest, split, normalise on train, fit, and report metrics, shares and VOT."""
    rc = cfg.real
    out = _prepare_dir(cfg)
    (out / "vot").mkdir(exist_ok=True)
    raw_train, raw_test = load_real(rc, cfg.seed)
    train, test, norm = normalise(raw_train, raw_test)
    atomic_write_text(out / "normalisation.json", json.dumps(norm.to_dict(), indent=2))
    spec = MNLSpec.from_dict(rc.mnl_spec) if rc.mnl_spec else default_real_spec(train.feature_names)
    observed = test.label_shares()
    metric_rows, share_rows, vot_rows = [], [], []
    for entry in cfg.models:
        cell = fit_cell(entry, train, cfg, "real", out, mnl_spec=spec)
        metric_rows.append({"model": entry.label, "cv_accuracy": cell.cv["accuracy"], "cv_gmpca": cell.cv["gmpca"],
                            "test_accuracy": accuracy(cell.fitted, test), "test_gmpca": gmpca(cell.fitted, test)})
        ms = market_shares(cell.fitted, test)
        row = {"model": entry.label, "scenario": "observed_test",
               **{f"share_{a}": v for a, v in zip(test.alternative_names, ms)},
               "share_error": share_error(ms, observed)}
        share_rows.append(row)
        for name, sdef in rc.scenarios.items():
            # scenario shifts are given in original units; convert to the normalised scale
            shift = {c: v / norm.std[norm.columns.index(c)] for c, v in sdef.get("shift", {}).items()}
            scaled = shift_columns(raw_test, scale=sdef.get("scale"))
            moved = shift_columns(norm.apply(scaled), shift=shift)
            ms = market_shares(cell.fitted, moved)
            share_rows.append({"model": entry.label, "scenario": name,
                               **{f"share_{a}": v for a, v in zip(test.alternative_names, ms)},
                               "share_error": math.nan})
        for v in rc.vot:
            rep = vot(cell.fitted, train, v["time"], v["cost"], int(v.get("alternative", 0)))
            # back to original units: d/dt_raw = d/dt_norm / sd_t, likewise for cost
            factor = norm.std[norm.columns.index(v["cost"])] / norm.std[norm.columns.index(v["time"])]
            rep = summarise_wtp(rep.values * factor, rep.valid, config={**rep.config, "unit_factor": factor})
            tag = v.get("name", f"{v['time']}_{v['cost']}")
            rep.write(out / "vot" / f"{tag}__{entry.name}.json", out / "vot" / f"{tag}__{entry.name}.csv")
            vot_rows.append({"model": entry.label, "indicator": tag, "median": rep.median, "q1": rep.q1,
                             "q3": rep.q3, "invalid_percent": rep.invalid_fraction, "consistent": rep.consistent})
    share_rows.append({"model": "Observed", "scenario": "observed_test",
                       **{f"share_{a}": v for a, v in zip(test.alternative_names, observed)}, "share_error": 0.0})
    _write_frame(pd.DataFrame(metric_rows), out / "metrics.csv")
    _write_frame(pd.DataFrame(share_rows), out / "market_shares.csv")
    _write_frame(pd.DataFrame(vot_rows, columns=["model", "indicator", "median", "q1", "q3", "invalid_percent",
                                                 "consistent"]), out / "vot_summary.csv")
    return out


RUNNERS = {"exp1": run_experiment1, "exp2": run_experiment2, "exp3": run_experiment3, "real": run_real}


def run(cfg: ExperimentConfig) -> Path:
    return RUNNERS[cfg.experiment](cfg)
