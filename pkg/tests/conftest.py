import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rspgame.equilibrium import solve_gne
from rspgame.network import build_single_pair_instance, build_two_cluster_instance

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=300)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def small_cluster():
    return build_two_cluster_instance(n=3, q=0.25)


@pytest.fixture(scope="session")
def small_cluster_gne(small_cluster):
    return solve_gne(small_cluster)


@pytest.fixture(scope="session")
def pair():
    return build_single_pair_instance(ride_cost=0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240617)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one PASS/FAIL line per acceptance criterion for the run summary."""
    def record(criterion, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: s.split("criterion ")[1]):
            terminalreporter.write_line(line)
