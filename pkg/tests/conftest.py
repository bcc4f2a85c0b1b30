import numpy as np
import pytest


def random_spd(rng, c, cond=10.0):
    q, _ = np.linalg.qr(rng.standard_normal((c, c)))
    lam = np.exp(rng.uniform(0, np.log(cond), c))
    return (q * lam) @ q.T


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
