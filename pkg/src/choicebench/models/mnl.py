"""Multinomial logit with linear-in-parameters utilities, fitted by maximum likelihood."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..data import SYNTHETIC_COLUMNS, ChoiceDataset
from ..synthgen import softmax
from .base import ProbabilisticChoiceModel, TrainingError

log = logging.getLogger(__name__)

L1_SMOOTHING = 1e-8


@dataclass
class UtilityTerm:
    """``coefficient * column`` enters the utility of ``alternative``.

    Terms sharing a coefficient name share one parameter (generic
    coefficient); distinct names give alternative-specific coefficients.
    """

    alternative: int
    column: str
    coefficient: str


@dataclass
class MNLSpec:
    """Utility specification.

    ``individual_specific`` columns enter every alternative except the
    first, whose coefficients are anchored at zero; likewise the first
    alternative's constant is fixed to zero when ``intercepts`` is set.
    """

    terms: list[UtilityTerm] = field(default_factory=list)
    individual_specific: list[str] = field(default_factory=list)
    intercepts: bool = True
    regulariser: str = "none"
    strength: float = 0.0

    def __post_init__(self):
        self.terms = [t if isinstance(t, UtilityTerm) else UtilityTerm(**t) for t in self.terms]
        self.regulariser = self.regulariser.lower()
        if self.regulariser not in ("none", "l1", "l2"):
            raise ValueError(f"unknown regulariser {self.regulariser!r}")
        if self.strength < 0:
            raise ValueError("regularisation strength must be >= 0")

    @classmethod
    def synthetic(cls, shared: bool = False, **kw) -> "MNLSpec":
        """Linear utilities over each alternative's own (x, I) attributes.

        With ``shared=False`` every alternative gets its own pair of
        coefficients; ``shared=True`` uses one generic pair.
        """
        terms = []
        for i in range(3):
            x, inc = SYNTHETIC_COLUMNS[2 * i], SYNTHETIC_COLUMNS[2 * i + 1]
            terms.append(UtilityTerm(i, x, "b_x" if shared else f"b_x{i + 1}"))
            terms.append(UtilityTerm(i, inc, "b_I" if shared else f"b_I{i + 1}"))
        return cls(terms=terms, **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "MNLSpec":
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def parameter_names(self, n_alternatives: int) -> list[str]:
        names = [f"asc_{j + 1}" for j in range(1, n_alternatives)] if self.intercepts else []
        for t in self.terms:
            if t.coefficient not in names:
                names.append(t.coefficient)
        for col in self.individual_specific:
            names += [f"{col}_alt{j + 1}" for j in range(1, n_alternatives)]
        return names

    def design(self, X: np.ndarray, feature_names, n_alternatives: int) -> np.ndarray:
        """Design tensor ``D`` of shape (n, J, P) with ``V = D @ omega``."""
        names = self.parameter_names(n_alternatives)
        pos = {n: k for k, n in enumerate(names)}
        cols = {c: k for k, c in enumerate(feature_names)}
        D = np.zeros((X.shape[0], n_alternatives, len(names)))
        if self.intercepts:
            for j in range(1, n_alternatives):
                D[:, j, pos[f"asc_{j + 1}"]] = 1.0
        for t in self.terms:
            if t.column not in cols:
                raise ValueError(f"utility term refers to unknown column {t.column!r}")
            if not 0 <= t.alternative < n_alternatives:
                raise ValueError(f"utility term refers to alternative {t.alternative}")
            D[:, t.alternative, pos[t.coefficient]] += X[:, cols[t.column]]
        for col in self.individual_specific:
            for j in range(1, n_alternatives):
                D[:, j, pos[f"{col}_alt{j + 1}"]] = X[:, cols[col]]
        return D


@dataclass
class OptimizerSettings:
    tol: float = 1e-6
    max_iter: int = 1000
    init: str = "zeros"
    seed: int = 0


def _penalty(spec: MNLSpec, w: np.ndarray, mask: np.ndarray):
    lam = spec.strength
    if spec.regulariser == "none" or lam == 0:
        return 0.0, np.zeros_like(w)
    wm = w * mask
    if spec.regulariser == "l2":
        return 0.5 * lam * float(wm @ wm), lam * wm
    r = np.sqrt(wm * wm + L1_SMOOTHING ** 2)
    return 0.5 * lam * float(np.sum(r - L1_SMOOTHING)), 0.5 * lam * wm / r


def mnl_objective(w: np.ndarray, D: np.ndarray, Y: np.ndarray, spec: MNLSpec | None = None,
                  mask: np.ndarray | None = None):
    """Mean negative log-likelihood (plus penalty) and its gradient."""
    V = D @ w
    m = V.max(axis=1, keepdims=True)
    lse = np.log(np.exp(V - m).sum(axis=1)) + m[:, 0]
    n = D.shape[0]
    f = float(np.mean(lse - np.sum(V * Y, axis=1)))
    P = np.exp(V - lse[:, None])
    g = np.einsum("njp,nj->p", D, P - Y) / n
    if spec is not None:
        pf, pg = _penalty(spec, w, np.ones_like(w) if mask is None else mask)
        f, g = f + pf, g + pg
    return f, g


def bfgs(fun, x0: np.ndarray, tol: float = 1e-6, max_iter: int = 1000):
    """BFGS with Armijo backtracking. Returns (x, f, grad, n_iter, converged)."""
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    H = np.eye(x.size)
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g)) < tol:
            return x, f, g, it - 1, True
        d = -H @ g
        slope = float(g @ d)
        if slope >= 0:
            H = np.eye(x.size)
            d, slope = -g, -float(g @ g)
        t = 1.0
        while True:
            x_new = x + t * d
            f_new, g_new = fun(x_new)
            if np.isfinite(f_new) and f_new <= f + 1e-4 * t * slope:
                break
            t *= 0.5
            if t < 1e-20:
                return x, f, g, it, bool(np.max(np.abs(g)) < tol)
        s, y = x_new - x, g_new - g
        sy = float(s @ y)
        if sy > 1e-16:
            rho = 1.0 / sy
            I = np.eye(x.size)
            H = (I - rho * np.outer(s, y)) @ H @ (I - rho * np.outer(y, s)) + rho * np.outer(s, s)
        x, f, g = x_new, f_new, g_new
    return x, f, g, max_iter, bool(np.max(np.abs(g)) < tol)


class MNL(ProbabilisticChoiceModel):
    kind = "mnl"

    def __init__(self, spec: MNLSpec | None = None, optimizer: OptimizerSettings | None = None,
                 raise_on_nonconvergence: bool = False):
        self.spec = spec if spec is not None else MNLSpec.synthetic()
        self.optimizer = optimizer or OptimizerSettings()
        self.raise_on_nonconvergence = raise_on_nonconvergence
        self.weights: np.ndarray | None = None
        self.feature_names: tuple[str, ...] = ()
        self.converged: bool | None = None
        self.n_iter = 0
        self.grad_norm = np.inf
        self.objective = np.nan

    @property
    def parameter_names(self) -> list[str]:
        return self.spec.parameter_names(self.n_alternatives)

    @property
    def coefficients(self) -> dict[str, float]:
        return dict(zip(self.parameter_names, self.weights.tolist()))

    def _penalty_mask(self, names):
        return np.array([0.0 if n.startswith("asc_") else 1.0 for n in names])

    def fit(self, train: ChoiceDataset) -> "MNL":
        self.n_alternatives = train.n_alternatives
        self.n_features = train.features.shape[1]
        self.feature_names = train.feature_names
        D = self.spec.design(train.features, train.feature_names, self.n_alternatives)
        if not np.isfinite(D).all():
            raise ValueError("design matrix contains non-finite values")
        Y = np.eye(self.n_alternatives)[train.labels]
        names = self.parameter_names
        mask = self._penalty_mask(names)
        opt = self.optimizer
        if opt.init == "zeros":
            w0 = np.zeros(len(names))
        else:
            w0 = np.random.default_rng(opt.seed).normal(0.0, 1.0, len(names))
        w, f, g, n_iter, ok = bfgs(lambda w: mnl_objective(w, D, Y, self.spec, mask), w0,
                                   tol=opt.tol, max_iter=opt.max_iter)
        self.weights, self.objective, self.n_iter, self.converged = w, f, n_iter, ok
        self.grad_norm = float(np.max(np.abs(g)))
        if not ok:
            msg = f"MNL did not converge in {n_iter} iterations (|grad|={self.grad_norm:.3g})"
            if self.raise_on_nonconvergence:
                raise TrainingError(msg)
            log.warning(msg)
        return self

    def utilities(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.spec.design(X, self.feature_names, self.n_alternatives) @ self.weights

    def _proba(self, X):
        return softmax(self.utilities(X))

    def utility_gradient(self, column: str | int) -> np.ndarray:
        """dV_j / d(column) for every alternative j (constant: utilities are linear)."""
        if isinstance(column, (int, np.integer)):
            column = self.feature_names[column]
        k = self.feature_names.index(column)
        e = np.zeros((1, self.n_features))
        e[0, k] = 1.0
        z = np.zeros((1, self.n_features))
        return (self.spec.design(e, self.feature_names, self.n_alternatives)
                - self.spec.design(z, self.feature_names, self.n_alternatives))[0] @ self.weights

    def _state(self):
        return {
            "config": {"spec": self.spec.to_dict(), "optimizer": asdict(self.optimizer)},
            "n_alternatives": self.n_alternatives,
            "n_features": self.n_features,
            "feature_names": list(self.feature_names),
            "weights": None if self.weights is None else self.weights.tolist(),
            "converged": self.converged,
        }

    @classmethod
    def _from_state(cls, state):
        cfg = state["config"]
        m = cls(MNLSpec.from_dict(cfg["spec"]), OptimizerSettings(**cfg["optimizer"]))
        m.n_alternatives, m.n_features = state["n_alternatives"], state["n_features"]
        m.feature_names = tuple(state["feature_names"])
        m.weights = np.asarray(state["weights"], dtype=float)
        m.converged = state["converged"]
        return m
