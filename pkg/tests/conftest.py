"""Collects acceptance outcomes and prints one line per criterion at the end."""

from __future__ import annotations

import pytest

_outcomes: dict[int, tuple[str, list[str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or (report.when != "call" and report.passed):
        return
    number, title = marker.args
    _, results = _outcomes.setdefault(number, (title, []))
    results.append("PASS" if report.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        title, results = _outcomes[number]
        status = "PASS" if results and all(r == "PASS" for r in results) else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number:>2}: {title}")
