import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_states(rng, n_states, n_vars, scale=10.0):
    """Independent complex positive-P states (alpha and alpha+ not conjugate)."""
    return scale * (rng.standard_normal((n_states, n_vars)) + 1j * rng.standard_normal((n_states, n_vars)))


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict(capsys):
    """``verdict(label, ok, detail)`` prints one PASS/FAIL line and asserts ``ok``."""
    def report(label, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'} criterion {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
