import os
from collections import OrderedDict

import numpy as np
import pytest

from kselect.mdata import MarkerMatrix

_criteria = OrderedDict()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(id, text): acceptance criterion covered by a test")
    config.addinivalue_line("markers", "slow: long-running statistical check")


def pytest_runtest_logreport(report):
    crit = getattr(report, "_criterion", None)
    if crit is None:
        return
    entry = _criteria.setdefault(crit[0], {"text": crit[1], "outcomes": []})
    if report.when == "call" or report.outcome != "passed":
        entry["outcomes"].append(report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        rep._criterion = mark.args


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for cid, entry in sorted(_criteria.items(), key=lambda kv: int(kv[0].lstrip("AC"))):
        outs = entry["outcomes"]
        if "failed" in outs:
            verdict = "FAIL"
        elif outs and all(o == "skipped" for o in outs):
            verdict = "SKIP"
        else:
            verdict = "PASS"
        terminalreporter.write_line(f"{cid:<5} {verdict:<5} {entry['text']}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def binary_matrix(rng, n, p, imputed=True):
    return MarkerMatrix(rng.integers(0, 2, size=(n, p)).astype(float), imputed=imputed)


@pytest.fixture(scope="session")
def data_dir():
    return os.environ.get("KSELECT_DATA_DIR", os.path.join(os.path.dirname(__file__), "data"))
