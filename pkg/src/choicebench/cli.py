"""Command-line entry point: ``choicebench <command> [options]``.

Failures print a one-line JSON object ``{"error": ..., "message": ...}``
to stderr and exit with status 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .behavioural import (CANONICAL_INDIVIDUAL, CANONICAL_SWEEP_ATTR, IndicatorConfig, extrapolation_grid,
                          interpolation_grid, probability_sweep, vot, wtp_population)
from .data import atomic_write_text, read_csv, write_csv
from .experiments import DEFAULT_SEED, ExperimentConfig, run
from .hpo import DEFAULT_SPACES, DESK_BUDGET, SearchSpace, search
from .metrics import evaluate, market_shares
from .models import build_model, load_model, save_model
from .synthgen import SyntheticConfig, canonical_configs, generate, max_accuracy
from .validation import cross_validate, grouped_kfold

log = logging.getLogger("choicebench")


def _load_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8")) if path else {}


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, default=float))


def cmd_generate(args):
    if args.config:
        cfg = SyntheticConfig.from_json(Path(args.config).read_text(encoding="utf-8"))
        configs = [cfg]
    else:
        configs = canonical_configs(args.seed, args.n_train, args.n_test)
        if args.dataset:
            configs = [c for c in configs if c.slug in args.dataset]
            if len(configs) != len(set(args.dataset)):
                raise ValueError(f"unknown dataset in {args.dataset}")
    out = Path(args.out)
    summary = []
    for cfg in configs:
        d = out / cfg.slug
        d.mkdir(parents=True, exist_ok=True)
        train, test = generate(cfg)
        write_csv(train, d / "train.csv")
        write_csv(test, d / "test.csv")
        atomic_write_text(d / "config.json", cfg.to_json())
        summary.append({"dataset": cfg.slug, "max_accuracy_train": max_accuracy(train),
                        "max_accuracy_test": max_accuracy(test), "dir": str(d)})
    _emit(summary)


def cmd_fit(args):
    train = read_csv(args.train)
    params = _load_json(args.params)
    model = build_model(args.model, params, seed=args.seed).fit(train)
    save_model(model, args.out)
    _emit({"model": args.model, "saved": args.out, **evaluate(model, train).__dict__})


def cmd_evaluate(args):
    model = load_model(args.model)
    data = read_csv(args.data)
    rep = evaluate(model, data)
    _emit({**rep.__dict__, "market_shares": market_shares(model, data).tolist(),
           "observed_shares": data.label_shares().tolist()})


def cmd_hpo(args):
    train = read_csv(args.train)
    space = SearchSpace.from_dict(_load_json(args.space) if args.space else DEFAULT_SPACES[args.model])
    folds = grouped_kfold(train, args.folds, args.seed)

    def objective(params):
        res = cross_validate(lambda p: build_model(args.model, p, seed=args.seed), params, train, folds)
        return res.score, res.fold_scores

    result = search(args.method, space, args.budget, objective, args.seed)
    result.write_json(args.out)
    _emit({"best": result.best.to_dict(), "saved": args.out})


def cmd_indicators(args):
    model = load_model(args.model)
    data = read_csv(args.data)
    if args.vot:
        rep = vot(model, data, args.target, args.income, args.alternative)
    else:
        cfg = IndicatorConfig(args.target, args.income, args.alternative, h=args.h, iqr_k=args.iqr_k)
        rep = wtp_population(model, data, cfg)
    if args.out:
        rep.write(f"{args.out}.json", f"{args.out}.csv")
    _emit(rep.summary())


def cmd_sweep(args):
    model = load_model(args.model)
    base = np.array([float(v) for v in args.base.split(",")]) if args.base else CANONICAL_INDIVIDUAL
    grid = interpolation_grid() if args.range == "interpolation" else extrapolation_grid()
    truth = None
    if args.truth:
        truth = {c.slug: c for c in canonical_configs()}[args.truth].ground_truth
    sw = probability_sweep(model, base, args.attr, grid, truth=truth)
    sw.write_csv(args.out)
    _emit({"saved": args.out, "points": int(grid.size), "distinct_values_alt1": sw.n_distinct(0)})


def cmd_experiment(args):
    d = _load_json(args.config)
    d["experiment"] = args.which
    if args.seed is not None:
        d["seed"] = args.seed
    if args.budget is not None:
        d["budget"] = args.budget
    if args.out is not None:
        d["out"] = args.out
    cfg = ExperimentConfig.from_dict(d)
    out = run(cfg)
    _emit({"experiment": cfg.experiment, "output": str(out)})


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="choicebench", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write synthetic train/test CSVs")
    g.add_argument("--config", help="SyntheticConfig JSON (otherwise the canonical twelve)")
    g.add_argument("--dataset", nargs="*", help="canonical dataset slugs, e.g. logit_linear_bI1")
    g.add_argument("--seed", type=int, default=DEFAULT_SEED)
    g.add_argument("--n-train", type=int, default=10_000)
    g.add_argument("--n-test", type=int, default=1_000)
    g.add_argument("--out", default="data")
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", help="fit one model and save it as JSON")
    f.add_argument("--train", required=True)
    f.add_argument("--model", required=True, help="mnl, nn, dnn, rf, gbdt")
    f.add_argument("--params", help="JSON file of hyperparameters")
    f.add_argument("--seed", type=int, default=DEFAULT_SEED)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("evaluate", help="accuracy, GMPCA and market shares of a saved model")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.set_defaults(func=cmd_evaluate)

    h = sub.add_parser("hpo", help="hyperparameter search by grouped CV cross-entropy")
    h.add_argument("--train", required=True)
    h.add_argument("--model", required=True)
    h.add_argument("--space", help="search-space JSON (defaults to the built-in space)")
    h.add_argument("--method", choices=["tpe", "random"], default="tpe")
    h.add_argument("--budget", type=int, default=DESK_BUDGET)
    h.add_argument("--folds", type=int, default=5)
    h.add_argument("--seed", type=int, default=DEFAULT_SEED)
    h.add_argument("--out", required=True)
    h.set_defaults(func=cmd_hpo)

    i = sub.add_parser("indicators", help="population WTP (or VOT) report")
    i.add_argument("--model", required=True)
    i.add_argument("--data", required=True)
    i.add_argument("--target", default="x1", help="numerator attribute (time for --vot)")
    i.add_argument("--income", default="I1", help="denominator attribute (cost for --vot)")
    i.add_argument("--alternative", type=int, default=0)
    i.add_argument("--h", type=float, default=0.025)
    i.add_argument("--iqr-k", type=float, default=1.5)
    i.add_argument("--vot", action="store_true", help="steps of 5%% of each attribute's std")
    i.add_argument("--out", help="path prefix for <out>.json and <out>.csv")
    i.set_defaults(func=cmd_indicators)

    s = sub.add_parser("sweep", help="probability curve along one attribute")
    s.add_argument("--model", required=True)
    s.add_argument("--base", help="comma-separated feature row (default: canonical individual)")
    s.add_argument("--attr", type=int, default=CANONICAL_SWEEP_ATTR)
    s.add_argument("--range", choices=["interpolation", "extrapolation"], default="interpolation")
    s.add_argument("--truth", help="canonical dataset slug whose true curve is attached")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    x = sub.add_parser("experiment", help="run experiment 1, 2, 3 or the real-data pipeline")
    x.add_argument("which", choices=["1", "2", "3", "real"])
    x.add_argument("--config", help="ExperimentConfig JSON")
    x.add_argument("--seed", type=int)
    x.add_argument("--budget", type=int)
    x.add_argument("--out")
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except Exception as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "command": args.command}),
              file=sys.stderr)
        if args.verbose:
            raise
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
