import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cellfree_ris.config import kmh_to_ms, default_profile, small_profile
from cellfree_ris.harness import build_drop

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def report(criterion: int, passed: bool, detail: str) -> None:
    """Record one acceptance line; printed in the terminal summary."""
    ACCEPTANCE_LINES.append(f"criterion {criterion:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_drop():
    return build_drop(small_profile(velocity=kmh_to_ms(60)), 2024, 0)


@pytest.fixture(scope="session")
def default_drop():
    return build_drop(default_profile(velocity=kmh_to_ms(60)), 2024, 0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
