import sys
from collections import OrderedDict
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from aeguard.nn import Dense, Network, ReLU  # noqa: E402
from aeguard.tensor import Rng  # noqa: E402

_criteria = OrderedDict()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(num, title): acceptance criterion covered by the test")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    num, title = getattr(report, "criterion", (None, None))
    if num is None:
        return
    entry = _criteria.setdefault(num, {"title": title, "outcomes": []})
    entry["outcomes"].append(report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = tuple(marker.args)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criteria):
        e = _criteria[num]
        outs = e["outcomes"]
        if "failed" in outs:
            status = "FAIL"
        elif outs and all(o == "skipped" for o in outs):
            status = "SKIP"
        else:
            status = "PASS"
        terminalreporter.write_line(f"criterion {num}: {status:4s} {e['title']} ({len(outs)} checks)")


@pytest.fixture
def rng():
    return Rng(20240607)


@pytest.fixture
def hand_mlp():
    """2-4-3 MLP with small hand-picked weights."""
    w1 = np.array([[1.0, -1.0], [0.5, 2.0], [-1.5, 0.25], [0.0, 1.0]])
    b1 = np.array([0.1, -0.2, 0.3, -0.4])
    w2 = np.array([[1.0, 0.0, -1.0, 2.0], [0.5, -0.5, 0.25, 1.0], [-2.0, 1.0, 0.0, 0.5]])
    b2 = np.array([0.0, 0.1, -0.1])
    net = Network((2,), [Dense(2, 4, w1, b1), ReLU(), Dense(4, 3, w2, b2)], ["hidden", "act", "out"])
    return net, (w1, b1, w2, b2)
