import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from winnav.worldgen import LayoutPrior, build_dataset, generate_house

settings.register_profile("winnav", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("winnav")


@pytest.fixture(scope="session")
def houses():
    """A dozen default-prior houses keyed by id."""
    return {h: generate_house(LayoutPrior(), [123, h]) for h in range(12)}


@pytest.fixture(scope="session")
def small_ds():
    return build_dataset(LayoutPrior(), 24, seed=5, train_per_house=4, unseen_per_house=2)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
