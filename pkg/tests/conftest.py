import numpy as np
import pytest

ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail=""):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title}"
    if detail:
        line += f" ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def central_difference(fn, theta, h=1e-5):
    """Central finite-difference gradient of a scalar function of a vector."""
    theta = np.asarray(theta, dtype=float)
    grad = np.empty_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h
        grad[j] = (fn(theta + e) - fn(theta - e)) / (2 * h)
    return grad


def max_rel_error(analytic, numeric):
    """max_j |a_j - n_j| / (1 + |a_j|)."""
    analytic = np.atleast_1d(analytic)
    numeric = np.atleast_1d(numeric)
    return float(np.max(np.abs(analytic - numeric) / (1.0 + np.abs(analytic))))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
