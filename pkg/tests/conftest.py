from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
FIXTURE = ROOT / "data" / "fixture"
CONFIGS = ROOT / "configs"


@pytest.fixture
def fixture_dir():
    return FIXTURE


@pytest.fixture
def configs_dir():
    return CONFIGS


# one summary line per acceptance criterion, collected from tests marked
# @pytest.mark.criterion(n, "description")
_CRITERIA: dict = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    crit = _PENDING.get(report.nodeid)
    if crit is None:
        return
    n, text = crit
    ok = _CRITERIA.get(n, (text, True))[1] and report.outcome == "passed"
    _CRITERIA[n] = (text, ok)


_PENDING: dict = {}


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            _PENDING[item.nodeid] = tuple(mark.args)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        text, ok = _CRITERIA[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {text}")
