"""Shared pytest configuration.

Acceptance tests carry ``@pytest.mark.criterion(n)``; their outcome (and any
detail attached through the ``record`` fixture) is reported as one line per
criterion in the terminal summary.
"""

import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")
    config.addinivalue_line("markers", "slow: takes more than a few seconds")


@pytest.fixture
def record(request):
    """Attach a one-line detail string to the current test's report."""

    def _record(detail):
        request.node.user_properties.append(("detail", str(detail)))

    return _record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n = mark.args[0]
    if rep.when == "call" or (rep.when == "setup" and (rep.skipped or rep.failed)):
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        details = [v for k, v in item.user_properties if k == "detail"]
        if rep.skipped and isinstance(rep.longrepr, tuple):
            details.append(rep.longrepr[2])
        prev = _RESULTS.get(n)
        # A criterion split over several tests fails if any part fails.
        if prev is not None:
            rank = {"FAIL": 2, "PASS": 1, "SKIP": 0}
            status = max(prev[0], status, key=rank.get)
            details = prev[1] + details
        _RESULTS[n] = (status, details)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        status, details = _RESULTS[n]
        text = "; ".join(details)
        terminalreporter.write_line(f"criterion {n:>2}: {status}" + (f"  ({text})" if text else ""))
