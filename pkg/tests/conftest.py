from __future__ import annotations

from collections import defaultdict

import numpy as np
import pytest

from choicebench.experiments import ExperimentConfig, ModelEntry, fit_cell
from choicebench.synthgen import generate

ACCEPTANCE_TITLES = {
    1: "maximum accuracy vs reference table",
    2: "MNL 5-fold CV accuracy/GMPCA",
    3: "MNL median WTP",
    4: "finite-difference WTP vs coefficient ratio",
    5: "Cobb-Douglas WTP distribution oracle",
    6: "true market shares vs reference table",
    7: "MNL reproduces training shares",
    8: "scenario share errors",
    9: "tree-model derivative pathology",
    10: "property suite",
}

_results: dict[int, list] = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    crit = dict(report.user_properties).get("criterion")
    if crit is not None:
        outcome = "xfailed" if hasattr(report, "wasxfail") else report.outcome
        _results[crit].append((outcome, dict(report.user_properties).get("detail", "")))


@pytest.fixture(autouse=True)
def _tag_criterion(request, record_property):
    m = request.node.get_closest_marker("criterion")
    if m is not None:
        record_property("criterion", m.args[0])


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_TITLES):
        if n not in _results:
            continue
        outcomes = _results[n]
        ok = all(o == "passed" for o, _ in outcomes)
        known = not ok and all(o in ("passed", "xfailed") for o, _ in outcomes)
        details = "; ".join(d for _, d in outcomes if d)
        status = "PASS" if ok else "FAIL, expected" if known else "FAIL"
        tr.write_line(f"criterion {n:2d} [{status}] {ACCEPTANCE_TITLES[n]}"
                      + (f" :: {details}" if details else ""))


# ------------------------------------------------------------- shared data

@pytest.fixture(scope="session")
def bench_config():
    return ExperimentConfig(experiment="exp3")


@pytest.fixture(scope="session")
def synthetic(bench_config):
    """slug -> (config, train, test) for the twelve canonical datasets."""
    return {c.slug: (c, *generate(c)) for c in bench_config.synthetic_configs()}


class FitCache:
    def __init__(self, cfg, data):
        self.cfg, self.data, self.cache = cfg, data, {}

    def get(self, model: str, slug: str, with_cv: bool = False):
        key = (model, slug, with_cv)
        if key not in self.cache:
            _, train, _ = self.data[slug]
            self.cache[key] = fit_cell(ModelEntry(model), train, self.cfg, slug, None, with_cv=with_cv)
        return self.cache[key]


@pytest.fixture(scope="session")
def fits(bench_config, synthetic):
    return FitCache(bench_config, synthetic)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
