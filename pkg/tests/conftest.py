import logging

import numpy as np
import pytest

from pyramnet import tensor as T


@pytest.fixture
def f64():
    with T.default_dtype(np.float64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _quiet_clamp_warnings(caplog):
    caplog.set_level(logging.ERROR, logger="pyramnet.gem")


# acceptance summary: one line per criterion ------------------------------------------

_criteria = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title, budget): acceptance criterion with a runtime budget in seconds")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        number, title, budget = mark.args
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        _criteria.append((number, title, budget, report.outcome, report.duration, detail))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, budget, outcome, seconds, detail in sorted(_criteria):
        status = "PASS" if outcome == "passed" else "FAIL"
        line = f"criterion {number}: {status}  {title}  ({seconds:.1f} s, budget {budget} s)"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
