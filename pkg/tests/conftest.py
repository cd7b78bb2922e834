import numpy as np
import pytest

# acceptance criteria report one line each here; printed after the run
CRITERIA: dict[str, str] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(CRITERIA, key=lambda s: (int(s.split(".")[0].rstrip("ab")), s)):
        terminalreporter.write_line(CRITERIA[key])
