import time
from contextlib import contextmanager

import pytest

_CRITERIA = []


@contextmanager
def _criterion(name, budget_seconds):
    """Record one acceptance criterion as PASS or FAIL, including its time budget."""
    entry = {"name": name, "detail": "", "passed": False}
    _CRITERIA.append(entry)
    start = time.perf_counter()
    try:
        yield entry
        elapsed = time.perf_counter() - start
        entry["detail"] += f" ({elapsed:.1f} s of {budget_seconds:g} s)"
        assert elapsed < budget_seconds, f"{name} took {elapsed:.1f} s, budget {budget_seconds} s"
        entry["passed"] = True
    finally:
        line = f"{'PASS' if entry['passed'] else 'FAIL'}  {name}:{entry['detail']}"
        entry["line"] = line
        print("\n" + line)


def skip_criterion(name, reason):
    _CRITERIA.append({"name": name, "passed": False, "line": f"SKIP  {name}: {reason}"})
    pytest.skip(reason)


@pytest.fixture
def criterion():
    return _criterion


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for entry in _CRITERIA:
        terminalreporter.write_line(entry.get("line", f"FAIL  {entry['name']}: did not finish"))
