import contextlib
import time

import pytest


def pytest_configure(config):
    config._criteria = {}


@pytest.fixture
def criterion(request):
    """Context manager recording PASS/FAIL and runtime for one acceptance criterion."""
    log = request.config._criteria

    @contextlib.contextmanager
    def run(number, title, budget_s):
        start = time.perf_counter()
        status = "FAIL"
        try:
            yield
            elapsed = time.perf_counter() - start
            assert elapsed < budget_s, f"runtime {elapsed:.2f}s over the {budget_s}s budget"
            status = "PASS"
        finally:
            elapsed = time.perf_counter() - start
            log[number] = (status, title, elapsed, budget_s)
            print(f"\n{status} criterion {number}: {title} ({elapsed:.2f}s / {budget_s}s)")

    return run


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = getattr(config, "_criteria", {})
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(log):
        status, title, elapsed, budget = log[number]
        terminalreporter.write_line(f"{status} {number:2d}. {title} ({elapsed:.2f}s, budget {budget}s)")
