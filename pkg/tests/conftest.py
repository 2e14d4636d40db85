"""Shared pytest hooks: one PASS/FAIL line per acceptance criterion."""

import pytest

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    n = dict(report.user_properties).get("criterion")
    if n is None:
        return
    props = dict(report.user_properties)
    _criteria[n] = (props.get("title", ""), report.outcome, props.get("measured", ""))


@pytest.fixture(autouse=True)
def _criterion_properties(request, record_property):
    mark = request.node.get_closest_marker("criterion")
    if mark is not None:
        n, title = mark.args
        record_property("criterion", n)
        record_property("title", title)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_criteria):
        title, outcome, measured = _criteria[n]
        status = "PASS" if outcome == "passed" else "FAIL"
        line = f"criterion {n:2d} {status}: {title}"
        if measured:
            line += f" [{measured}]"
        tr.write_line(line)
