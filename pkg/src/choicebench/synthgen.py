"""Synthetic random-utility choice data with analytic ground truth.

Three alternatives, two attributes per alternative ``(x_i, I_i)`` drawn
uniformly on the unit square. Utilities are ``V_i + eps_i`` with either
Gumbel (logit) or Normal (probit) errors; the chosen alternative is the
utility maximiser, ties resolved toward the lowest index.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import SYNTHETIC_COLUMNS, ChoiceDataset
from .rng import stream

N_ALTERNATIVES = 3
CANONICAL_DISPERSION = 1.0 / math.sqrt(12.0)


class Form(str, enum.Enum):
    LINEAR = "Linear"
    COBB_DOUGLAS = "CobbDouglas"


class Family(str, enum.Enum):
    GUMBEL = "Gumbel"
    NORMAL = "Normal"


class Scenario(str, enum.Enum):
    S1 = "S1"
    S2 = "S2"
    S3 = "S3"


S2_SHIFT = np.array([0.3, 0.3, 0.0, 0.0, 0.0, 0.0])
S3_SCALE = np.array([1.3, 1.3, 1.0, 1.0, 1.0, 1.0])


@dataclass(frozen=True)
class UtilitySpec:
    form: Form = Form.LINEAR
    beta_x: float = 1.0
    beta_I: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "form", Form(self.form))
        if not (self.beta_x > 0 and self.beta_I > 0):
            raise ValueError("beta_x and beta_I must be positive")


@dataclass(frozen=True)
class ErrorSpec:
    family: Family = Family.GUMBEL
    dispersion: float = CANONICAL_DISPERSION

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if not self.dispersion > 0:
            raise ValueError("error dispersion must be positive")

    @property
    def location(self) -> float:
        # zero-mean errors: Gumbel mean is loc + scale * euler_gamma
        return -self.dispersion * np.euler_gamma if self.family is Family.GUMBEL else 0.0

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.family is Family.GUMBEL:
            return rng.gumbel(self.location, self.dispersion, size)
        return rng.normal(0.0, self.dispersion, size)


@dataclass(frozen=True)
class GroundTruth:
    utility: UtilitySpec
    error: ErrorSpec

    @property
    def label(self) -> str:
        fam = "logit" if self.error.family is Family.GUMBEL else "probit"
        form = "linear" if self.utility.form is Form.LINEAR else "CD"
        return f"{fam} {form} beta_I={self.utility.beta_I:.1f}"


@dataclass(frozen=True)
class SyntheticConfig:
    utility: UtilitySpec = field(default_factory=UtilitySpec)
    error: ErrorSpec = field(default_factory=ErrorSpec)
    n_train: int = 10_000
    n_test: int = 1_000
    n_alternatives: int = N_ALTERNATIVES
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.utility, dict):
            object.__setattr__(self, "utility", UtilitySpec(**self.utility))
        if isinstance(self.error, dict):
            object.__setattr__(self, "error", ErrorSpec(**self.error))
        if self.n_train < 1 or self.n_test < 1:
            raise ValueError("n_train and n_test must be >= 1")
        if self.n_alternatives != N_ALTERNATIVES:
            raise ValueError("synthetic data uses exactly 3 alternatives")

    @property
    def ground_truth(self) -> GroundTruth:
        return GroundTruth(self.utility, self.error)

    @property
    def slug(self) -> str:
        fam = "logit" if self.error.family is Family.GUMBEL else "probit"
        form = "linear" if self.utility.form is Form.LINEAR else "cd"
        return f"{fam}_{form}_bI{self.utility.beta_I:g}"

    def to_json(self) -> str:
        d = asdict(self)
        d["utility"]["form"] = self.utility.form.value
        d["error"]["family"] = self.error.family.value
        return json.dumps(d, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SyntheticConfig":
        return cls(**json.loads(text))


def canonical_configs(seed: int = 0, n_train: int = 10_000, n_test: int = 1_000) -> list[SyntheticConfig]:
    """The twelve benchmark configurations, in reporting order."""
    out = []
    for family in (Family.GUMBEL, Family.NORMAL):
        for form in (Form.LINEAR, Form.COBB_DOUGLAS):
            for beta_I in (1.0, 2.0, 0.5):
                out.append(SyntheticConfig(UtilitySpec(form, 1.0, beta_I), ErrorSpec(family),
                                           n_train=n_train, n_test=n_test, seed=seed))
    return out


# ------------------------------------------------------------- utilities

def systematic_utility(spec: UtilitySpec, x, I):
    x = np.asarray(x, dtype=float)
    I = np.asarray(I, dtype=float)
    if spec.form is Form.LINEAR:
        return spec.beta_x * x + spec.beta_I * I
    if np.any(x < 0) or np.any(I < 0):
        if not (float(spec.beta_x).is_integer() and float(spec.beta_I).is_integer()):
            raise ValueError("Cobb-Douglas utility undefined for negative inputs with non-integer exponents")
    return np.power(x, spec.beta_x) * np.power(I, spec.beta_I)


def utilities(spec: UtilitySpec, features: np.ndarray) -> np.ndarray:
    """Systematic utilities (n, 3) for rows in the (x1, I1, x2, I2, x3, I3) layout."""
    F = np.atleast_2d(np.asarray(features, dtype=float))
    if F.shape[1] != 2 * N_ALTERNATIVES:
        raise ValueError("expected the 6-column synthetic layout")
    return systematic_utility(spec, F[:, 0::2], F[:, 1::2])


def true_wtp(spec: UtilitySpec, x, I):
    if spec.form is Form.LINEAR:
        return np.broadcast_to(spec.beta_x / spec.beta_I, np.broadcast(np.asarray(x), np.asarray(I)).shape) * 1.0
    x = np.asarray(x, dtype=float)
    if np.any(x == 0):
        raise ZeroDivisionError("Cobb-Douglas WTP undefined at x = 0")
    return spec.beta_x * np.asarray(I, dtype=float) / (spec.beta_I * x)


# ------------------------------------------------------------ generation

def _draw_split(config: SyntheticConfig, split: str, n: int) -> ChoiceDataset:
    X = stream(config.seed, "attributes", split).random((n, 2 * N_ALTERNATIVES))
    V = utilities(config.utility, X)
    eps = config.error.draw(stream(config.seed, "errors", split), V.shape)
    labels = np.argmax(V + eps, axis=1)
    return ChoiceDataset(
        features=X,
        labels=labels,
        feature_names=SYNTHETIC_COLUMNS,
        alternative_names=tuple(str(i + 1) for i in range(N_ALTERNATIVES)),
        systematic_flag=np.argmax(V, axis=1) == labels,
        name=f"{config.slug}/{split}",
    )


def generate(config: SyntheticConfig) -> tuple[ChoiceDataset, ChoiceDataset]:
    """Draw the train and test splits for ``config``; deterministic in the seed."""
    return _draw_split(config, "train", config.n_train), _draw_split(config, "test", config.n_test)


def max_accuracy(dataset: ChoiceDataset) -> float:
    """Percent of rows whose choice equals the systematic-utility argmax."""
    if dataset.systematic_flag is None:
        raise ValueError("dataset has no systematic_flag")
    return 100.0 * float(np.mean(dataset.systematic_flag))


# ------------------------------------------------------ true probabilities

def softmax(v: np.ndarray) -> np.ndarray:
    z = v - v.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def true_prob_logit(gt: GroundTruth, features) -> np.ndarray:
    if gt.error.family is not Family.GUMBEL:
        raise ValueError("logit probabilities need Gumbel errors")
    single = np.ndim(features) == 1
    p = softmax(utilities(gt.utility, features) / gt.error.dispersion)
    return p[0] if single else p


def true_prob_probit(gt: GroundTruth, features, n_draws: int = 100_000, seed: int = 0,
                     chunk: int = 2_000_000) -> np.ndarray:
    """Monte Carlo choice probabilities under Normal errors.

    The same ``n_draws`` error vectors are reused for every row (common
    random numbers), so curves over a grid are smooth in the grid variable.
    Result rows are ``counts / n_draws`` and sum to one exactly.
    """
    if gt.error.family is not Family.NORMAL:
        raise ValueError("probit probabilities need Normal errors")
    if n_draws < 10_000:
        raise ValueError("n_draws must be at least 1e4")
    single = np.ndim(features) == 1
    V = utilities(gt.utility, features)
    eps = gt.error.draw(stream(seed, "mc", "probit"), (n_draws, N_ALTERNATIVES))
    out = np.empty_like(V)
    rows_per_chunk = max(1, chunk // n_draws)
    for start in range(0, V.shape[0], rows_per_chunk):
        block = V[start:start + rows_per_chunk]
        winners = np.argmax(block[:, None, :] + eps[None, :, :], axis=2)
        for j in range(N_ALTERNATIVES):
            out[start:start + rows_per_chunk, j] = np.count_nonzero(winners == j, axis=1)
    out /= n_draws
    return out[0] if single else out


def true_probabilities(gt: GroundTruth, features, n_draws: int = 100_000, seed: int = 0) -> np.ndarray:
    if gt.error.family is Family.GUMBEL:
        return true_prob_logit(gt, features)
    return true_prob_probit(gt, features, n_draws=n_draws, seed=seed)


def apply_scenario_features(features: np.ndarray, scenario: Scenario | str) -> np.ndarray:
    scenario = Scenario(scenario)
    F = np.asarray(features, dtype=float)
    if F.ndim != 2 or F.shape[1] != 2 * N_ALTERNATIVES:
        raise ValueError("scenarios are defined for the 6-column synthetic layout")
    if scenario is Scenario.S1:
        return F.copy()
    if scenario is Scenario.S2:
        return F + S2_SHIFT
    return F * S3_SCALE


def true_market_shares(gt: GroundTruth, scenario: Scenario | str = Scenario.S1, n_draws: int = 1_000_000,
                       seed: int = 0, chunk: int = 250_000) -> np.ndarray:
    """Population choice shares (percent) after the scenario transform.

    Attributes are resampled uniformly. Under Gumbel errors the closed-form
    logit probability of each sampled individual is averaged; under Normal
    errors one error vector per individual is simulated and the winners
    counted.
    """
    if n_draws < 100_000:
        raise ValueError("n_draws must be at least 1e5")
    scenario = Scenario(scenario)
    rng_x = stream(seed, "mc", "shares", "attributes")
    rng_e = stream(seed, "mc", "shares", "errors")
    total = np.zeros(N_ALTERNATIVES)
    done = 0
    while done < n_draws:
        m = min(chunk, n_draws - done)
        X = apply_scenario_features(rng_x.random((m, 2 * N_ALTERNATIVES)), scenario)
        V = utilities(gt.utility, X)
        if gt.error.family is Family.GUMBEL:
            total += softmax(V / gt.error.dispersion).sum(axis=0)
        else:
            winners = np.argmax(V + gt.error.draw(rng_e, V.shape), axis=1)
            total += np.bincount(winners, minlength=N_ALTERNATIVES)
        done += m
    return 100.0 * total / n_draws


# ------------------------------------------- WTP distribution, Cobb-Douglas

def _check_beta(beta: float):
    if not beta > 0:
        raise ValueError("beta must be positive")


def cd_wtp_cdf(beta: float, z):
    """CDF of ``beta * I / x`` with (x, I) uniform on the unit square."""
    _check_beta(beta)
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError("WTP support is z >= 0")
    out = np.where(z <= beta, z / (2.0 * beta), 1.0 - beta / (2.0 * np.where(z > beta, z, 1.0)))
    return out if out.ndim else float(out)


def cd_wtp_pdf(beta: float, z):
    _check_beta(beta)
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError("WTP support is z >= 0")
    out = np.where(z <= beta, 1.0 / (2.0 * beta), beta / (2.0 * np.maximum(z, beta) ** 2))
    return out if out.ndim else float(out)


def cd_wtp_median(beta: float) -> float:
    _check_beta(beta)
    return float(beta)
