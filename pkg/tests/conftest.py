import numpy as np
import pytest

from remse.data import SynthConfig, generate_synthetic
from remse.losses import Batch
from remse.numerics import make_rng


def random_batch(rng, n=5, ds=4, dv=8, classes=4):
    S = rng.uniform(0.1, 1.0, size=(classes, ds))
    T = S / np.linalg.norm(S, axis=1, keepdims=True)
    X = rng.standard_normal((n, dv))
    y = rng.integers(0, classes, size=n)
    return Batch(X, y, S, T)


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture(scope="session")
def small_data():
    cfg = SynthConfig(classes=6, seen=4, ds=5, dv=8, n_per_class=10, noise=0.1, gamma=1.0)
    return generate_synthetic(cfg, make_rng(3))


# one PASS/FAIL line per acceptance criterion in the terminal summary
_criteria = {}
_outcomes = {}


def pytest_collection_modifyitems(items):
    for item in items:
        if item.module.__name__.endswith("test_acceptance"):
            doc = (item.function.__doc__ or item.name).strip().splitlines()[0]
            _criteria[item.nodeid] = doc


def pytest_runtest_logreport(report):
    if report.nodeid not in _criteria:
        return
    if report.when == "call" or report.failed:
        _outcomes.setdefault(report.nodeid, "PASS" if report.passed else "FAIL")
        if report.failed:
            _outcomes[report.nodeid] = "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, label in _criteria.items():
        if nodeid in _outcomes:
            terminalreporter.write_line(f"[{_outcomes[nodeid]}] {label}")
