import sys
import time

import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def criterion(pytestconfig):
    """Return ``report(number, passed, detail)`` that records one PASS/FAIL line."""
    started = time.time()
    lines = pytestconfig.stash.setdefault(_LINES, [])

    def report(number, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail} [{time.time() - started:.1f}s]"
        lines.append((number, line))
        print(line, file=sys.stderr)
        return passed

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
