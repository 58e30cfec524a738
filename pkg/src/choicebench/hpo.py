"""Hyperparameter search: random search and a tree-structured Parzen estimator.

Both optimizers minimise an objective (normally mean CV cross-entropy)
over a :class:`SearchSpace`. Trial ``t`` of the random phase draws from
its own stream ``(seed, "hpo", "sample", t)``, so a TPE run whose budget
equals its startup count reproduces random search exactly.

The TPE variant models each dimension independently. Completed trials are
split into the best ``gamma`` fraction ("good") and the rest ("bad"); for
each a density is built (Gaussian kernels for numeric dimensions, smoothed
counts for categorical ones, each mixed with a uniform prior). Candidates
are drawn from the good density and the one maximising
``log l(x) - log g(x)`` is evaluated next.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .data import atomic_write_text
from .rng import stream

log = logging.getLogger(__name__)

TPE_GAMMA = 0.25
TPE_CANDIDATES = 64
TPE_STARTUP = 10
DESK_BUDGET = 50


# ----------------------------------------------------------------- domains

@dataclass(frozen=True)
class IntRange:
    low: int
    high: int
    kind = "int"

    def __post_init__(self):
        _check_bounds(self.low, self.high)

    def sample(self, rng):
        return int(rng.integers(self.low, self.high + 1))

    # numeric embedding used by the Parzen estimator
    def lo_hi(self):
        return self.low - 0.5, self.high + 0.5

    def to_unit(self, v):
        return float(v)

    def from_unit(self, u):
        return int(min(self.high, max(self.low, round(u))))


@dataclass(frozen=True)
class RealRange:
    low: float
    high: float
    kind = "real"

    def __post_init__(self):
        _check_bounds(self.low, self.high)

    def sample(self, rng):
        return float(rng.uniform(self.low, self.high))

    def lo_hi(self):
        return float(self.low), float(self.high)

    def to_unit(self, v):
        return float(v)

    def from_unit(self, u):
        return float(min(self.high, max(self.low, u)))


@dataclass(frozen=True)
class LogUniform:
    low: float
    high: float
    kind = "loguniform"

    def __post_init__(self):
        _check_bounds(self.low, self.high)
        if self.low <= 0:
            raise ValueError("log-uniform bounds must be positive")

    def sample(self, rng):
        return float(math.exp(rng.uniform(math.log(self.low), math.log(self.high))))

    def lo_hi(self):
        return math.log(self.low), math.log(self.high)

    def to_unit(self, v):
        return math.log(v)

    def from_unit(self, u):
        return float(min(self.high, max(self.low, math.exp(u))))


@dataclass(frozen=True)
class Categorical:
    choices: tuple
    kind = "choice"

    def __post_init__(self):
        if len(self.choices) == 0:
            raise ValueError("categorical domain needs at least one choice")
        object.__setattr__(self, "choices", tuple(self.choices))

    def sample(self, rng):
        return self.choices[int(rng.integers(len(self.choices)))]


@dataclass(frozen=True)
class Fixed:
    value: Any
    kind = "fixed"

    def sample(self, rng):
        return self.value


Domain = IntRange | RealRange | LogUniform | Categorical | Fixed
NUMERIC = (IntRange, RealRange, LogUniform)


def _check_bounds(a, b):
    if not (math.isfinite(a) and math.isfinite(b)):
        raise ValueError("bounds must be finite")
    if a > b:
        raise ValueError(f"lower bound {a} exceeds upper bound {b}")


def _plain(v):
    if isinstance(v, np.generic):
        return v.item()
    return v


def domain_to_dict(d: Domain) -> dict:
    if isinstance(d, Categorical):
        return {"type": "choice", "values": [_plain(c) for c in d.choices]}
    if isinstance(d, Fixed):
        return {"type": "fixed", "value": _plain(d.value)}
    return {"type": d.kind, "low": d.low, "high": d.high}


_VOCAB = {
    "int": "int", "uniform int": "int", "integer": "int",
    "real": "real", "float": "real", "uniform real": "real",
    "uniform": "uniform", "uniform distribution": "uniform",
    "loguniform": "loguniform", "log-uniform": "loguniform", "loguniform distribution": "loguniform",
    "choice": "choice", "categorical": "choice",
    "fixed": "fixed",
}


def domain_from_dict(d) -> Domain:
    """Parse one domain.

    Accepts ``{"type": ..., "low": a, "high": b}``, ``{"type": ..., "values":
    [...]}``, ``{"type": "fixed", "value": v}`` or the compact form
    ``{"type": "Uniform distribution", "space": [a, b]}``. "Uniform" with
    integer bounds is an integer domain. A bare scalar is a fixed value.
    """
    if not isinstance(d, dict):
        return Fixed(d)
    kind = _VOCAB.get(re.sub(r"\s+", " ", str(d.get("type", "")).strip().lower()))
    if kind is None:
        raise ValueError(f"unknown domain type {d.get('type')!r}")
    space = d.get("space")
    if kind == "fixed":
        value = d["value"] if "value" in d else (space[0] if isinstance(space, list) else space)
        return Fixed(value)
    if kind == "choice":
        return Categorical(tuple(d["values"] if "values" in d else space))
    low, high = (d["low"], d["high"]) if "low" in d else space
    if kind == "uniform":
        kind = "int" if all(isinstance(v, int) and not isinstance(v, bool) for v in (low, high)) else "real"
    if kind == "int":
        return IntRange(int(low), int(high))
    if kind == "real":
        return RealRange(float(low), float(high))
    return LogUniform(float(low), float(high))


@dataclass
class SearchSpace:
    domains: dict[str, Domain]

    def __post_init__(self):
        self.domains = {k: (v if isinstance(v, (*NUMERIC, Categorical, Fixed)) else domain_from_dict(v))
                        for k, v in self.domains.items()}

    def sample(self, rng: np.random.Generator) -> dict:
        # sorted names: sampling order must not depend on dict insertion order
        return {k: self.domains[k].sample(rng) for k in sorted(self.domains)}

    def to_dict(self) -> dict:
        return {k: domain_to_dict(v) for k, v in self.domains.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "SearchSpace":
        return cls({k: domain_from_dict(v) for k, v in d.items()})


# ------------------------------------------------------------------ trials

@dataclass
class Trial:
    index: int
    params: dict
    score: float
    fold_scores: list[float] = field(default_factory=list)

    def __post_init__(self):
        if not self.fold_scores:
            self.fold_scores = [self.score]

    def to_dict(self) -> dict:
        return {"index": self.index, "params": {k: _plain(v) for k, v in self.params.items()},
                "score": _json_num(self.score), "fold_scores": [_json_num(s) for s in self.fold_scores]}


def _json_num(v):
    return float(v) if math.isfinite(v) else None


@dataclass
class SearchResult:
    method: str
    seed: int
    space: SearchSpace
    trials: list[Trial]

    @property
    def best(self) -> Trial:
        # first trial attaining the minimum
        return min(self.trials, key=lambda t: (t.score, t.index))

    def best_so_far(self) -> list[float]:
        return np.minimum.accumulate([t.score for t in self.trials]).tolist()

    def to_dict(self) -> dict:
        return {"method": self.method, "seed": self.seed, "space": self.space.to_dict(),
                "trials": [t.to_dict() for t in self.trials], "best": self.best.to_dict()}

    def write_json(self, path) -> None:
        atomic_write_text(path, json.dumps(self.to_dict(), indent=2))


Objective = Callable[[dict], Any]


def _evaluate(objective: Objective, params: dict, index: int) -> Trial:
    out = objective(dict(params))
    if isinstance(out, tuple):
        score, folds = out
        folds = [float(s) for s in folds]
        score = float(np.mean(folds))
    else:
        score, folds = float(out), []
    if not math.isfinite(score):
        log.warning("trial %d produced a non-finite score; treated as +inf", index)
        score = math.inf
        folds = folds or [math.inf]
    return Trial(index, params, score, folds)


def _startup_params(space: SearchSpace, seed: int, t: int) -> dict:
    return space.sample(stream(seed, "hpo", "sample", t))


def random_search(space: SearchSpace, budget: int, objective: Objective, seed: int = 0) -> SearchResult:
    if budget < 1:
        raise ValueError("budget must be >= 1")
    trials = [_evaluate(objective, _startup_params(space, seed, t), t) for t in range(budget)]
    return SearchResult("random", seed, space, trials)


# --------------------------------------------------------------------- TPE

def _bandwidths(mus: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Per-kernel widths: distance to the farther sorted neighbour, clipped."""
    span = hi - lo
    order = np.argsort(mus, kind="stable")
    s = np.r_[lo, mus[order], hi]
    width = np.maximum(s[1:-1] - s[:-2], s[2:] - s[1:-1])
    out = np.empty_like(mus)
    out[order] = np.clip(width, span / min(100.0, len(mus) + 1.0), span)
    return out


def _norm_cdf(z):
    return 0.5 * (1.0 + np.vectorize(math.erf)(np.asarray(z) / math.sqrt(2.0)))


class _Parzen:
    """Truncated Gaussian mixture on [lo, hi] with one uniform prior component."""

    def __init__(self, obs: np.ndarray, lo: float, hi: float):
        self.lo, self.hi = lo, hi
        self.mu = np.asarray(obs, dtype=float)
        self.sigma = _bandwidths(self.mu, lo, hi) if self.mu.size else np.zeros(0)
        self.mass = (_norm_cdf((hi - self.mu) / self.sigma) - _norm_cdf((lo - self.mu) / self.sigma)
                     if self.mu.size else np.zeros(0))
        self.n = self.mu.size + 1

    def sample(self, rng, size: int) -> np.ndarray:
        comp = rng.integers(0, self.n, size)
        out = rng.uniform(self.lo, self.hi, size)
        k = comp < self.mu.size
        if k.any():
            draws = rng.normal(self.mu[comp[k]], self.sigma[comp[k]])
            out[k] = np.clip(draws, self.lo, self.hi)
        return out

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        dens = np.full(x.shape, 1.0 / (self.hi - self.lo)) if self.hi > self.lo else np.ones(x.shape)
        if self.mu.size:
            z = (x[:, None] - self.mu[None, :]) / self.sigma[None, :]
            k = np.exp(-0.5 * z * z) / (self.sigma * math.sqrt(2 * math.pi) * np.maximum(self.mass, 1e-300))
            dens = dens + k.sum(axis=1)
        return np.log(dens / self.n)


def _cat_probs(obs: list, choices: tuple) -> np.ndarray:
    counts = np.ones(len(choices))
    for v in obs:
        counts[choices.index(v)] += 1.0
    return counts / counts.sum()


def tpe_propose(space: SearchSpace, trials: list[Trial], rng: np.random.Generator, gamma: float = TPE_GAMMA,
                n_candidates: int = TPE_CANDIDATES) -> dict:
    ranked = sorted(trials, key=lambda t: (t.score, t.index))
    n_good = max(1, int(math.ceil(gamma * len(ranked))))
    good, bad = ranked[:n_good], ranked[n_good:]
    cand = {}
    score = np.zeros(n_candidates)
    for name in sorted(space.domains):
        d = space.domains[name]
        if isinstance(d, Fixed):
            cand[name] = [d.value] * n_candidates
        elif isinstance(d, Categorical):
            pg = _cat_probs([t.params[name] for t in good], d.choices)
            pb = _cat_probs([t.params[name] for t in bad], d.choices)
            idx = rng.choice(len(d.choices), size=n_candidates, p=pg)
            cand[name] = [d.choices[i] for i in idx]
            score += np.log(pg[idx]) - np.log(pb[idx])
        else:
            lo, hi = d.lo_hi()
            lg = _Parzen(np.array([d.to_unit(t.params[name]) for t in good]), lo, hi)
            lb = _Parzen(np.array([d.to_unit(t.params[name]) for t in bad]), lo, hi)
            u = lg.sample(rng, n_candidates)
            values = [d.from_unit(v) for v in u]
            # score at the value actually evaluated (integers are rounded)
            at = np.array([d.to_unit(v) for v in values])
            cand[name] = values
            score += lg.log_pdf(at) - lb.log_pdf(at)
    best = int(np.argmax(score))
    return {name: cand[name][best] for name in sorted(space.domains)}


def tpe_search(space: SearchSpace, budget: int, objective: Objective, seed: int = 0,
               n_startup: int = TPE_STARTUP, gamma: float = TPE_GAMMA,
               n_candidates: int = TPE_CANDIDATES) -> SearchResult:
    if not budget >= n_startup >= 1:
        raise ValueError("need budget >= n_startup >= 1")
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    trials: list[Trial] = []
    for t in range(budget):
        if t < n_startup:
            params = _startup_params(space, seed, t)
        else:
            params = tpe_propose(space, trials, stream(seed, "hpo", "tpe", t), gamma, n_candidates)
        trials.append(_evaluate(objective, params, t))
    return SearchResult("tpe", seed, space, trials)


def search(method: str, space: SearchSpace, budget: int, objective: Objective, seed: int = 0) -> SearchResult:
    if method == "random":
        return random_search(space, budget, objective, seed)
    if method == "tpe":
        return tpe_search(space, budget, objective, seed, n_startup=min(TPE_STARTUP, budget))
    raise ValueError(f"unknown search method {method!r}")


# default search spaces, desk-sized versions of the usual ranges
DEFAULT_SPACES = {
    "rf": {"n_trees": {"type": "Uniform distribution", "space": [1, 200]},
           "max_features": {"type": "Uniform distribution", "space": [2, 6]},
           "max_depth": {"type": "Uniform distribution", "space": [3, 10]},
           "min_leaf": {"type": "Uniform distribution", "space": [1, 20]},
           "min_split": {"type": "Uniform distribution", "space": [2, 20]},
           "criterion": {"type": "Choice", "space": ["gini", "entropy"]}},
    "gbdt": {"max_depth": {"type": "Uniform distribution", "space": [1, 14]},
             "gamma": {"type": "Loguniform distribution", "space": [1e-4, 5.0]},
             "min_child_weight": {"type": "Uniform distribution", "space": [1, 100]},
             "max_delta_step": {"type": "Uniform distribution", "space": [0, 10]},
             "subsample": {"type": "Uniform distribution", "space": [0.5, 1.0]},
             "colsample": {"type": "Uniform distribution", "space": [0.5, 1.0]},
             "l2_reg": {"type": "Loguniform distribution", "space": [1e-4, 10.0]},
             "n_rounds": {"type": "Uniform distribution", "space": [1, 300]}},
    "nn": {"width": {"type": "Uniform distribution", "space": [10, 500]},
           "activation": {"type": "Fixed", "space": ["tanh"]},
           "solver": {"type": "Choice", "space": ["bfgs", "sgd", "adam"]},
           "learning_rate": {"type": "Uniform distribution", "space": [1e-4, 1.0]},
           "batch_size": {"type": "Choice", "space": [128, 256, 512, 1024]}},
    "dnn": {"depth": {"type": "Choice", "space": [2, 3, 4, 5, 6, 7, 8, 9, 10]},
            "width": {"type": "Choice", "space": [25, 50, 100, 150, 200]},
            "dropout_rate": {"type": "Choice", "space": [0.1, 0.01, 1e-5]},
            "epochs": {"type": "Uniform distribution", "space": [50, 200]},
            "batch_size": {"type": "Choice", "space": [128, 256, 512, 1024]}},
}
