"""Derivative-based behavioural indicators for any fitted choice model.

Derivatives of choice probabilities are taken by central differences

    d s_i / d x_k  ~  (s_i(x + h e_k) - s_i(x - h e_k)) / (2h)

so tree ensembles, networks and the MNL are all treated identically.
Willingness to pay for attribute k of alternative i is the ratio of the
derivatives w.r.t. x_k and income; when s_i depends on the attributes only
through V_i, the common factor dF_i/dV_i cancels and the ratio equals the
ratio of utility derivatives.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from .data import ChoiceDataset, atomic_write_text
from .models.base import ProbabilisticChoiceModel
from .models.mnl import MNL
from .synthgen import Family, Form, GroundTruth, true_probabilities

DEFAULT_H = 0.025
DEFAULT_STEP_FRACTION = 0.05
SWEEP_POINTS = 201


@dataclass(frozen=True)
class DerivativeEstimate:
    value: float
    valid: bool

    def __post_init__(self):
        if self.valid and not math.isfinite(self.value):
            raise ValueError("a valid estimate must be finite")


@dataclass
class IndicatorConfig:
    """Which derivative ratio to take.

    ``target_attr`` and ``income_attr`` are column indices or names. ``h``
    is the step for the target attribute; ``h_income`` defaults to ``h``.
    """

    target_attr: int | str = 0
    income_attr: int | str = 1
    alternative: int = 0
    h: float = DEFAULT_H
    h_income: float | None = None
    iqr_k: float = 1.5

    def __post_init__(self):
        if not self.h > 0 or (self.h_income is not None and not self.h_income > 0):
            raise ValueError("finite-difference step must be > 0")
        if not self.iqr_k > 0:
            raise ValueError("iqr_k must be > 0")

    def resolve(self, feature_names) -> tuple[int, int]:
        return _index(self.target_attr, feature_names), _index(self.income_attr, feature_names)


def _index(attr, feature_names) -> int:
    if isinstance(attr, str):
        if attr not in feature_names:
            raise KeyError(f"unknown attribute {attr!r}")
        return list(feature_names).index(attr)
    return int(attr)


# ------------------------------------------------------------ derivatives

def central_diff_rows(model: ProbabilisticChoiceModel, X: np.ndarray, attr: int, h: float,
                      alternative: int | None = None) -> np.ndarray:
    """Central-difference derivative of the probabilities for every row.

    Returns shape (n,) for a given ``alternative`` or (n, J) for all.
    """
    if not h > 0:
        raise ValueError("h must be > 0")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    up, down = X.copy(), X.copy()
    up[:, attr] += h
    down[:, attr] -= h
    with np.errstate(invalid="ignore", over="ignore"):
        D = (model.predict_proba(up) - model.predict_proba(down)) / (2.0 * h)
    return D if alternative is None else D[:, alternative]


def central_diff(model: ProbabilisticChoiceModel, x, attr: int, h: float = DEFAULT_H,
                 alternative: int = 0) -> DerivativeEstimate:
    v = float(central_diff_rows(model, x, attr, h, alternative)[0])
    return DerivativeEstimate(v if math.isfinite(v) else math.nan, math.isfinite(v))


def wtp_rows(model: ProbabilisticChoiceModel, X: np.ndarray, cfg: IndicatorConfig,
             feature_names=None) -> tuple[np.ndarray, np.ndarray]:
    """Per-row derivative ratios and validity flags.

    A row is invalid when the ratio is non-finite or the income derivative
    is exactly zero; invalid rows carry NaN.
    """
    k, inc = cfg.resolve(feature_names or [])
    num = central_diff_rows(model, X, k, cfg.h, cfg.alternative)
    den = central_diff_rows(model, X, inc, cfg.h_income or cfg.h, cfg.alternative)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = num / den
    valid = np.isfinite(ratio) & (den != 0)
    return np.where(valid, ratio, np.nan), valid


def wtp_individual(model: ProbabilisticChoiceModel, x, cfg: IndicatorConfig, feature_names=None) -> DerivativeEstimate:
    values, valid = wtp_rows(model, x, cfg, feature_names)
    return DerivativeEstimate(float(values[0]), bool(valid[0]))


def generic_marginal_effect(model: ProbabilisticChoiceModel, X, attr: int, h: float = DEFAULT_H,
                            alternative: int = 0) -> np.ndarray:
    """dP_alternative / d x_attr by central differences, one value per row."""
    return central_diff_rows(model, X, attr, h, alternative)


def generic_elasticity(model: ProbabilisticChoiceModel, X, attr: int, h: float = DEFAULT_H,
                       alternative: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Marginal effect divided by P_alternative; invalid (NaN) where that probability is 0."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    me = generic_marginal_effect(model, X, attr, h, alternative)
    p = model.predict_proba(X)[:, alternative]
    valid = (p > 0) & np.isfinite(me)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(valid, me / p, np.nan), valid


@dataclass
class MNLIndicators:
    probabilities: np.ndarray       # (n, J)
    marginal_effects: np.ndarray    # (n, J): dP_j / dx_k
    elasticities: np.ndarray        # (n, J): dP_j / dx_k / P_j
    wtp: float


def analytic_indicators_mnl(model: MNL, X, cfg: IndicatorConfig) -> MNLIndicators:
    """Closed-form indicators for a linear-in-parameters MNL.

    With g_m = dV_m/dx_k, dP_j/dx_k = P_j (g_j - sum_m P_m g_m). When x_k
    enters only alternative i this reduces to P_i(1-P_i)b_k for j = i and
    -P_j P_i b_k otherwise.
    """
    if not isinstance(model, MNL):
        raise TypeError("analytic indicators need a fitted MNL")
    k, inc = cfg.resolve(model.feature_names)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    P = model.predict_proba(X)
    g = model.utility_gradient(k)
    semi = g[None, :] - P @ g[:, None]
    g_inc = model.utility_gradient(inc)
    i = cfg.alternative
    wtp = float(g[i] / g_inc[i]) if g_inc[i] != 0 else math.nan
    return MNLIndicators(P, P * semi, semi, wtp)


# -------------------------------------------------------------- screening

def quartiles(values: np.ndarray) -> tuple[float, float, float]:
    q1, med, q3 = np.quantile(np.asarray(values, dtype=float), [0.25, 0.5, 0.75], method="linear")
    return float(q1), float(med), float(q3)


def iqr_mask(values, k: float = 1.5, until_stable: bool = False) -> np.ndarray:
    """Keep values inside [Q1 - k IQR, Q3 + k IQR].

    One pass by default. Fences move once outliers are dropped, so a second
    pass can remove more points; ``until_stable`` repeats until nothing
    changes.
    """
    v = np.asarray(values, dtype=float)
    keep = np.isfinite(v)
    while keep.any():
        q1, _, q3 = quartiles(v[keep])
        iqr = q3 - q1
        new = keep & (v >= q1 - k * iqr) & (v <= q3 + k * iqr)
        if not until_stable or new.sum() == keep.sum():
            return new
        keep = new
    return keep


def iqr_filter(values, k: float = 1.5, until_stable: bool = False) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    return v[iqr_mask(v, k, until_stable)]


@dataclass
class WTPReport:
    values: np.ndarray
    valid: np.ndarray
    kept: np.ndarray
    invalid_fraction: float
    q1: float
    median: float
    q3: float
    consistent: bool | None
    config: dict = field(default_factory=dict)

    @property
    def filtered(self) -> np.ndarray:
        return self.values[self.kept]

    @property
    def n_rows(self) -> int:
        return int(self.values.size)

    def summary(self) -> dict:
        return {"n_rows": self.n_rows, "n_valid": int(self.valid.sum()), "n_kept": int(self.kept.sum()),
                "invalid_fraction": self.invalid_fraction, "q1": _json_float(self.q1),
                "median": _json_float(self.median), "q3": _json_float(self.q3),
                "consistent": self.consistent, "config": self.config}

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"row": np.arange(self.n_rows), "wtp": self.values,
                             "valid": self.valid, "kept": self.kept})

    def write(self, json_path, csv_path=None) -> None:
        atomic_write_text(json_path, self.to_json())
        if csv_path is not None:
            buf = io.StringIO()
            self.to_frame().to_csv(buf, index=False, float_format="%.10g")
            atomic_write_text(csv_path, buf.getvalue())


def _json_float(v):
    return v if math.isfinite(v) else None


def summarise_wtp(values: np.ndarray, valid: np.ndarray, iqr_k: float = 1.5, config: dict | None = None) -> WTPReport:
    """Screen per-row estimates: drop invalid ones, IQR-filter, take quartiles.

    The estimate is inconsistent when zero lies in [Q1, Q3]. With no valid
    estimates the quartiles are NaN and ``consistent`` is None.
    """
    values = np.asarray(values, dtype=float)
    valid = np.asarray(valid, dtype=bool)
    n = values.size
    invalid_fraction = 100.0 * (1.0 - valid.mean()) if n else 100.0
    kept = np.zeros(n, dtype=bool)
    if valid.any():
        kept[valid] = iqr_mask(values[valid], iqr_k)
        q1, med, q3 = quartiles(values[kept])
        consistent = not (q1 <= 0.0 <= q3)
    else:
        q1 = med = q3 = math.nan
        consistent = None
    return WTPReport(values, valid, kept, float(invalid_fraction), q1, med, q3, consistent, config or {})


def wtp_population(model: ProbabilisticChoiceModel, dataset: ChoiceDataset, cfg: IndicatorConfig) -> WTPReport:
    values, valid = wtp_rows(model, dataset.features, cfg, dataset.feature_names)
    return summarise_wtp(values, valid, cfg.iqr_k, asdict(cfg))


def vot(model: ProbabilisticChoiceModel, dataset: ChoiceDataset, time_attr: int | str, cost_attr: int | str,
        alternative: int = 0, step_fraction: float = DEFAULT_STEP_FRACTION, iqr_k: float = 1.5,
        reference: ChoiceDataset | None = None) -> WTPReport:
    """Value of time: time derivative over cost derivative.

    Steps are ``step_fraction`` times each attribute's standard deviation in
    ``reference`` (the training set; defaults to ``dataset``).
    """
    ref = reference if reference is not None else dataset
    t = _index(time_attr, dataset.feature_names)
    c = _index(cost_attr, dataset.feature_names)
    sd = ref.features.std(axis=0)
    if not (sd[t] > 0 and sd[c] > 0):
        raise ValueError("time and cost attributes need positive spread for the step size")
    cfg = IndicatorConfig(t, c, alternative, h=step_fraction * float(sd[t]),
                          h_income=step_fraction * float(sd[c]), iqr_k=iqr_k)
    return wtp_population(model, dataset, cfg)


# ----------------------------------------------------------------- sweeps

def interpolation_grid(n: int = SWEEP_POINTS) -> np.ndarray:
    return np.linspace(0.0, 1.0, n)


def extrapolation_grid(n: int = SWEEP_POINTS) -> np.ndarray:
    return np.linspace(-0.5, 1.5, n)


# individual whose alternative-2 income is swept in the synthetic study
CANONICAL_INDIVIDUAL = np.array([0.25, 0.25, 0.5, 0.5, 0.75, 0.75])
CANONICAL_SWEEP_ATTR = 3


@dataclass
class ProbabilitySweep:
    base: np.ndarray
    attr: int
    grid: np.ndarray
    probabilities: np.ndarray
    truth: np.ndarray | None = None
    alternative_names: tuple[str, ...] = ()

    def n_distinct(self, alternative: int = 0, decimals: int = 12) -> int:
        return int(np.unique(np.round(self.probabilities[:, alternative], decimals)).size)

    def max_gap(self, lo: float = -np.inf, hi: float = np.inf) -> float:
        """Largest absolute deviation from the truth curve for grid points in [lo, hi]."""
        if self.truth is None:
            raise ValueError("sweep has no truth curve")
        sel = (self.grid >= lo) & (self.grid <= hi) & np.all(np.isfinite(self.truth), axis=1)
        return float(np.max(np.abs(self.probabilities[sel] - self.truth[sel])))

    def to_frame(self) -> pd.DataFrame:
        names = self.alternative_names or tuple(str(j + 1) for j in range(self.probabilities.shape[1]))
        cols = {"value": self.grid}
        for j, a in enumerate(names):
            cols[f"p_{a}"] = self.probabilities[:, j]
        if self.truth is not None:
            for j, a in enumerate(names):
                cols[f"true_{a}"] = self.truth[:, j]
        return pd.DataFrame(cols)

    def write_csv(self, path) -> None:
        buf = io.StringIO()
        self.to_frame().to_csv(buf, index=False, float_format="%.10g")
        atomic_write_text(path, buf.getvalue())


def true_curve(gt: GroundTruth, rows: np.ndarray, n_draws: int = 100_000, seed: int = 0) -> np.ndarray:
    """Ground-truth probabilities per row; NaN where the utility is undefined.

    Cobb-Douglas utilities with fractional exponents have no value at
    negative attributes, which the extrapolation grid can reach.
    """
    out = np.full((rows.shape[0], 3), np.nan)
    ok = np.ones(rows.shape[0], dtype=bool)
    if gt.utility.form is Form.COBB_DOUGLAS:
        exps_integer = float(gt.utility.beta_x).is_integer() and float(gt.utility.beta_I).is_integer()
        if not exps_integer:
            ok = np.all(rows >= 0, axis=1)
    if ok.any():
        if gt.error.family is Family.GUMBEL:
            out[ok] = true_probabilities(gt, rows[ok])
        else:
            out[ok] = true_probabilities(gt, rows[ok], n_draws=n_draws, seed=seed)
    return out


def probability_sweep(model: ProbabilisticChoiceModel, base, attr: int, grid=None,
                      truth: GroundTruth | None = None, alternative_names=(), n_draws: int = 100_000,
                      seed: int = 0) -> ProbabilitySweep:
    grid = interpolation_grid() if grid is None else np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("sweep grid is empty")
    base = np.asarray(base, dtype=float)
    rows = np.repeat(base[None, :], grid.size, axis=0)
    rows[:, attr] = grid
    P = model.predict_proba(rows)
    T = true_curve(truth, rows, n_draws, seed) if truth is not None else None
    return ProbabilitySweep(base, attr, grid, P, T, tuple(alternative_names))
