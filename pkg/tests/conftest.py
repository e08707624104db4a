import numpy as np
import pytest

from gmrfsel.spectral import ThetaField, reflect


def random_theta(rng: np.random.Generator, p: int, scale: float = 0.1) -> ThetaField:
    """Random centrally symmetric coefficient field with a zero origin."""
    a = rng.normal(scale=scale, size=(p, p))
    a = 0.5 * (a + reflect(a))
    a[0, 0] = 0.0
    return ThetaField(a)


def random_positive_theta(rng: np.random.Generator, p: int, l1: float = 0.8) -> ThetaField:
    """Random field rescaled to ``|theta|_1 = l1`` (diagonally dominant when ``l1 < 1``)."""
    t = random_theta(rng, p)
    return t * (l1 / t.l1_norm())


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and getattr(mod, "RESULTS", None):
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
