"""Estimators sharing the :class:`ProbabilisticChoiceModel` interface."""

from __future__ import annotations

import json
from pathlib import Path

from ..data import atomic_write_text
from .base import (FORMAT_VERSION, PROB_FLOOR, NotFittedError, ProbabilisticChoiceModel, TrainingError,
                   UniformModel)
from .boost import BoostConfig, GradientBoosting
from .forest import ForestConfig, RandomForest
from .mlp import MLP, MLPConfig
from .mnl import MNL, MNLSpec, OptimizerSettings, UtilityTerm

MODEL_TYPES = {cls.kind: cls for cls in (MNL, MLP, RandomForest, GradientBoosting, UniformModel)}

# short names used in experiment configs
ALIASES = {"mnl": "mnl", "nn": "mlp", "dnn": "mlp", "mlp": "mlp", "rf": "forest", "forest": "forest",
           "xgboost": "boost", "gbdt": "boost", "boost": "boost", "uniform": "uniform"}


def build_model(name: str, params: dict | None = None, seed: int = 0) -> ProbabilisticChoiceModel:
    """Instantiate an unfitted model from a short name and a flat parameter dict."""
    params = dict(params or {})
    kind = ALIASES.get(name.lower())
    if kind is None:
        raise ValueError(f"unknown model {name!r}")
    if kind == "mnl":
        spec = params.pop("spec", None)
        spec = MNLSpec.from_dict(spec) if isinstance(spec, dict) else (spec or MNLSpec.synthetic())
        for key in ("regulariser", "strength"):
            if key in params:
                setattr(spec, key, params.pop(key))
        spec.__post_init__()
        return MNL(spec, OptimizerSettings(**params))
    if kind == "mlp":
        params.setdefault("seed", seed)
        # search spaces describe the architecture as width (and depth)
        if "width" in params or "depth" in params:
            width = int(params.pop("width", 20))
            depth = int(params.pop("depth", 2 if name.lower() == "dnn" else 1))
            params["hidden_widths"] = [width] * depth
        if name.lower() == "dnn":
            params.setdefault("hidden_widths", [50, 50])
            params.setdefault("activation", "relu")
            params.setdefault("dropout_rate", 0.01)
        elif not params.get("dropout_rate"):
            # full-batch quasi-Newton with a light weight penalty against separable fits
            params.setdefault("solver", "bfgs")
            if params["solver"] == "bfgs":
                params.setdefault("l2", 1e-3)
        return MLP(MLPConfig(**params))
    if kind == "forest":
        params.setdefault("seed", seed)
        return RandomForest(ForestConfig(**params))
    if kind == "boost":
        params.setdefault("seed", seed)
        return GradientBoosting(BoostConfig(**params))
    return UniformModel()


def model_from_dict(d: dict) -> ProbabilisticChoiceModel:
    if "version" not in d:
        raise ValueError("model document has no version field")
    if d["version"] > FORMAT_VERSION:
        raise ValueError(f"model format version {d['version']} is newer than supported {FORMAT_VERSION}")
    try:
        cls = MODEL_TYPES[d["type"]]
    except KeyError:
        raise ValueError(f"unknown model type {d.get('type')!r}") from None
    return cls._from_state(d)


def save_model(model: ProbabilisticChoiceModel, path) -> None:
    atomic_write_text(path, json.dumps(model.to_dict()))


def load_model(path) -> ProbabilisticChoiceModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


__all__ = [
    "ALIASES", "BoostConfig", "ForestConfig", "GradientBoosting", "MLP", "MLPConfig", "MNL", "MNLSpec",
    "MODEL_TYPES", "NotFittedError", "OptimizerSettings", "PROB_FLOOR", "ProbabilisticChoiceModel",
    "RandomForest", "TrainingError", "UniformModel", "UtilityTerm", "build_model", "load_model",
    "model_from_dict", "save_model",
]
