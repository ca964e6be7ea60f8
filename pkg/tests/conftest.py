import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.sqrt(0.5)


def hpd(rng, n, shift=1.0):
    """Random Hermitian positive definite n x n matrix."""
    g = crandn(rng, n, n)
    return g @ g.conj().T + shift * np.eye(n)


def waterfill_capacity(H, p_max, noise=1.0):
    """max log2 det(I + H Q H^H / noise) over Tr Q <= p_max, by water-filling."""
    gains = np.linalg.svd(H, compute_uv=False) ** 2 / noise
    gains = np.sort(gains[gains > 1e-12])[::-1]
    for k in range(len(gains), 0, -1):
        level = (p_max + np.sum(1.0 / gains[:k])) / k
        powers = level - 1.0 / gains[:k]
        if powers.min() > 0:
            return float(np.sum(np.log2(1.0 + powers * gains[:k])))
    return 0.0


@pytest.fixture
def rng():
    return np.random.default_rng(20241018)


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES = {}


def record_criterion(number: int, name: str, passed: bool, detail: str) -> bool:
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
