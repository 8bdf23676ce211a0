import numpy as np
import pytest

# acceptance outcomes, printed as one line per criterion at the end of the run
ACCEPTANCE = {}


def record(criterion, passed, detail=""):
    ACCEPTANCE[criterion] = (bool(passed), detail)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def acceptance():
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[key]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {key:>2}: {status}  {detail}")
