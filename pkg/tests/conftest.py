import dataclasses
from pathlib import Path

import pytest

from dualfeed.scenario import load_scenario

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture
def scenario():
    """Load a bundled scenario by stem, with optional field overrides."""
    def load(name: str, **overrides):
        cfg = load_scenario(SCENARIOS / f"{name}.scenario")
        return dataclasses.replace(cfg, **overrides) if overrides else cfg
    return load


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


_CRITERIA: dict = {}


def pytest_runtest_logreport(report):
    # a criterion fails if any phase of any of its tests fails
    number_title = getattr(report, "criterion", None)
    if number_title is None:
        return
    ok = _CRITERIA.get(number_title, True)
    if report.failed or (report.when == "call" and report.skipped):
        ok = False
    _CRITERIA[number_title] = ok


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        outcome.get_result().criterion = tuple(mark.args)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), ok in sorted(_CRITERIA.items()):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}")
    passed = sum(_CRITERIA.values())
    terminalreporter.write_line(f"{passed}/{len(_CRITERIA)} criteria passed")
