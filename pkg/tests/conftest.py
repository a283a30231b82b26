import numpy as np
import pytest

ACCEPTANCE_LINES: list[str] = []


def ball_points(rng, n, d, radius=1.0):
    z = rng.standard_normal((n, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return z * radius * rng.random((n, 1)) ** (1.0 / d)


def central_fd(fn, X, h=1e-6):
    """Central finite differences of a batched scalar function, shape (n, d)."""
    n, d = X.shape
    out = np.empty((n, d))
    for i in range(d):
        E = np.zeros(d)
        E[i] = h
        out[:, i] = (fn(X + E) - fn(X - E)) / (2 * h)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
