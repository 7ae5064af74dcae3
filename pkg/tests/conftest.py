"""Collects per-criterion outcomes from ``@pytest.mark.criterion(n)`` tests and prints one line each."""

import pytest

_OUTCOMES: dict[int, list[tuple[str, str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = "SKIP" if report.skipped else ("PASS" if report.passed else "FAIL")
        _OUTCOMES.setdefault(marker.args[0], []).append((item.name, status))


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        results = _OUTCOMES[number]
        statuses = {s for _, s in results}
        overall = "FAIL" if "FAIL" in statuses else ("PASS" if "PASS" in statuses else "SKIP")
        names = ", ".join(n for n, _ in results)
        terminalreporter.write_line(f"criterion {number:>2}: {overall}  ({names})")
