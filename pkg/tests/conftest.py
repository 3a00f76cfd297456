import numpy as np
import pytest

#: (criterion number, title, passed, detail) filled in by test_acceptance
CRITERIA = []


def record(number, title, passed, detail):
    CRITERIA.append((number, title, bool(passed), detail))
    print(f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(CRITERIA):
        terminalreporter.write_line(f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
