import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_spd(rng, n, jitter=1e-3):
    m = rng.standard_normal((n, n))
    return m.T @ m + jitter * np.eye(n)


# PASS/FAIL lines from test_acceptance.py, echoed in the terminal summary so
# they survive output capture.
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
