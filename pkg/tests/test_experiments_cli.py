import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from choicebench.cli import main
from choicebench.experiments import ExperimentConfig, run

ROOT = Path(__file__).resolve().parents[1]
FIXTURE = ROOT / "tests" / "fixtures" / "real_style.csv"


def _small(tmp_path, experiment, **kw):
    d = {"experiment": experiment, "datasets": ["logit_linear_bI1"], "n_train": 400, "n_test": 150,
         "models": ["mnl", {"name": "rf", "params": {"n_trees": 3}}], "share_draws": 100_000,
         "probit_draws": 10_000, "out": str(tmp_path), **kw}
    return ExperimentConfig.from_dict(d)


def _real_cfg(tmp_path, models=("mnl",)):
    d = json.loads((ROOT / "configs" / "real_style.json").read_text())
    d["real"]["path"] = str(FIXTURE)
    d.update(experiment="real", models=list(models), out=str(tmp_path))
    return ExperimentConfig.from_dict(d)


# ---------------------------------------------------------------- configuration

def test_config_validation(tmp_path):
    with pytest.raises(ValueError, match="unknown datasets"):
        ExperimentConfig(datasets=["logit_quadratic"])
    with pytest.raises(ValueError, match="unknown experiment"):
        ExperimentConfig(experiment="exp9")
    with pytest.raises(ValueError, match="'real' section"):
        ExperimentConfig(experiment="real")
    with pytest.raises(FileNotFoundError, match="not bundled"):
        ExperimentConfig(experiment="real", real={"path": str(tmp_path / "lpmc.csv"), "schema": {}})
    with pytest.raises(ValueError):
        ExperimentConfig(hpo_method="grid")


def test_digest_ignores_output_location():
    a, b = ExperimentConfig(out="x"), ExperimentConfig(out="y")
    assert a.digest() == b.digest() and a.run_dir() != b.run_dir()
    assert ExperimentConfig(seed=1).digest() != a.digest()
    assert ExperimentConfig.from_dict(json.loads(json.dumps(a.to_dict()))) == a


def test_synthetic_configs_follow_master_seed():
    a = ExperimentConfig(seed=1).synthetic_configs()
    assert len(a) == 12 and len({c.seed for c in a}) == 1
    assert a[0].seed != ExperimentConfig(seed=2).synthetic_configs()[0].seed


# ---------------------------------------------------------------- runners

def test_experiment1_outputs_and_determinism(tmp_path):
    out1 = run(_small(tmp_path / "a", "exp1"))
    out2 = run(_small(tmp_path / "b", "exp1"))
    for name in ("exp1_results.csv", "table_cv.csv", "table_test.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
    wide = pd.read_csv(out1 / "table_test.csv")
    assert list(wide.columns) == ["dataset", "MNL Accuracy", "MNL GMPCA", "RF Accuracy", "RF GMPCA", "Maximum"]
    meta = json.loads((out1 / "metadata.json").read_text())
    assert meta["config_hash"] in out1.name


def test_experiment1_with_search_writes_trials(tmp_path):
    cfg = _small(tmp_path, "exp1", hpo_method="random", budget=2, cv_folds=2,
                 models=[{"name": "rf", "params": {"n_trees": 2}, "space": {"max_depth": {"type": "int", "low": 2,
                                                                                         "high": 4}}}])
    out = run(cfg)
    doc = json.loads((out / "hpo" / "logit_linear_bI1__rf.json").read_text())
    assert len(doc["trials"]) == 2 and doc["method"] == "random"


def test_experiment2_sweeps(tmp_path):
    out = run(_small(tmp_path, "exp2", datasets=["probit_cd_bI0.5"]))
    sw = pd.read_csv(out / "sweeps" / "probit_cd_bI0.5__rf__extrapolation.csv")
    assert len(sw) == 201 and sw["value"].min() == -0.5
    # fractional Cobb-Douglas has no true curve for negative incomes
    assert sw.loc[sw["value"] < 0, "true_1"].isna().all()
    summary = pd.read_csv(out / "sweep_summary.csv")
    assert set(summary["range"]) == {"interpolation", "extrapolation"}


def test_experiment3_tables(tmp_path):
    out = run(_small(tmp_path, "exp3"))
    errors = pd.read_csv(out / "share_errors.csv")
    assert list(errors.columns) == ["dataset", "MNL S1", "MNL S2", "MNL S3", "RF S1", "RF S2", "RF S3"]
    wtp = pd.read_csv(out / "wtp_summary.csv")
    assert set(wtp["model"]) == {"MNL", "RF"} and (wtp["true_median"] == 1.0).all()
    assert (out / "wtp" / "logit_linear_bI1__mnl.json").exists()
    truth = pd.read_csv(out / "true_shares.csv")
    assert truth.filter(like="S2_").sum(axis=1).iloc[0] == pytest.approx(100)


def test_real_pipeline_recovers_value_of_time(tmp_path):
    out = run(_real_cfg(tmp_path))
    metrics = pd.read_csv(out / "metrics.csv")
    assert metrics["test_accuracy"].iloc[0] > 25
    vot = pd.read_csv(out / "vot_summary.csv")
    # the fixture was generated with a value of time of 0.16 per unit of cost
    assert vot["median"].iloc[0] == pytest.approx(0.16, abs=0.05) and vot["consistent"].iloc[0]
    shares = pd.read_csv(out / "market_shares.csv")
    assert set(shares["scenario"]) == {"observed_test", "drive_cost_up"}
    up = shares[(shares.model == "MNL") & (shares.scenario == "drive_cost_up")]["share_drive"].iloc[0]
    base = shares[(shares.model == "MNL") & (shares.scenario == "observed_test")]["share_drive"].iloc[0]
    assert up < base
    norm = json.loads((out / "normalisation.json").read_text())
    assert "purpose_work" in norm["columns"]


def test_real_pipeline_honours_split_column(tmp_path):
    cfg = _real_cfg(tmp_path)
    cfg.real.schema["split"] = "year"
    cfg.real.split_test_value = "2014"
    out = run(cfg)
    n_test = (pd.read_csv(FIXTURE)["year"] == 2014).sum()
    assert n_test > 0 and (out / "metrics.csv").exists()


# ---------------------------------------------------------------- CLI

def test_cli_round_trip(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["generate", "--dataset", "logit_linear_bI1", "--n-train", "500", "--n-test", "200",
                 "--seed", "3", "--out", str(data)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary[0]["dataset"] == "logit_linear_bI1"
    train, test = data / "logit_linear_bI1" / "train.csv", data / "logit_linear_bI1" / "test.csv"
    model = tmp_path / "mnl.json"
    assert main(["fit", "--train", str(train), "--model", "mnl", "--out", str(model)]) == 0
    capsys.readouterr()
    assert main(["evaluate", "--model", str(model), "--data", str(test)]) == 0
    ev = json.loads(capsys.readouterr().out)
    assert 30 < ev["accuracy"] <= 100 and abs(sum(ev["market_shares"]) - 100) < 1e-6
    assert main(["indicators", "--model", str(model), "--data", str(train), "--out", str(tmp_path / "w")]) == 0
    assert json.loads(capsys.readouterr().out)["consistent"] is True
    assert (tmp_path / "w.json").exists() and (tmp_path / "w.csv").exists()
    assert main(["sweep", "--model", str(model), "--range", "extrapolation", "--truth", "logit_linear_bI1",
                 "--out", str(tmp_path / "s.csv")]) == 0
    assert len(pd.read_csv(tmp_path / "s.csv")) == 201
    capsys.readouterr()
    space = tmp_path / "space.json"
    space.write_text(json.dumps({"n_trees": {"type": "int", "low": 1, "high": 3}}))
    assert main(["hpo", "--train", str(train), "--model", "rf", "--space", str(space), "--budget", "3",
                 "--folds", "2", "--out", str(tmp_path / "h.json")]) == 0
    assert len(json.loads((tmp_path / "h.json").read_text())["trials"]) == 3


def test_cli_experiment_command(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"datasets": ["logit_linear_bI1"], "models": ["mnl"], "n_train": 300,
                               "n_test": 100}))
    assert main(["experiment", "1", "--config", str(cfg), "--out", str(tmp_path / "runs"), "--seed", "5"]) == 0
    out = Path(json.loads(capsys.readouterr().out)["output"])
    assert (out / "table_cv.csv").exists() and json.loads((out / "config.json").read_text())["seed"] == 5


def test_cli_errors_are_json(tmp_path, capsys):
    assert main(["evaluate", "--model", str(tmp_path / "none.json"), "--data", "x.csv"]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "FileNotFoundError" and err["command"] == "evaluate"
    assert main(["generate", "--dataset", "logit_quadratic", "--out", str(tmp_path)]) == 1
    assert "unknown dataset" in json.loads(capsys.readouterr().err)["message"]


def test_cli_vot_flag(tmp_path, capsys):
    train = tmp_path / "d"
    main(["generate", "--dataset", "logit_linear_bI1", "--n-train", "300", "--n-test", "50", "--out", str(train)])
    model = tmp_path / "m.json"
    main(["fit", "--train", str(train / "logit_linear_bI1" / "train.csv"), "--model", "mnl", "--out", str(model)])
    capsys.readouterr()
    assert main(["indicators", "--model", str(model), "--data", str(train / "logit_linear_bI1" / "train.csv"),
                 "--vot"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["config"]["h"] == pytest.approx(0.05 * np.std(
        pd.read_csv(train / "logit_linear_bI1" / "train.csv")["x1"]))
