import pytest
from hypothesis import HealthCheck, settings

from roompassage.geometry import BaseDomain
from roompassage.limit import BaseOperators
from roompassage.mesh import mesh_rectangle

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

CANONICAL_Q, CANONICAL_R = 1.6, 0.25


@pytest.fixture(scope="session")
def unit_ops():
    """Unit-square operators keyed by inverse mesh size."""
    cache = {}

    def get(n: int) -> BaseOperators:
        if n not in cache:
            cache[n] = BaseOperators(mesh_rectangle(BaseDomain(), 1.0 / n))
        return cache[n]

    return get


_CRITERIA = []


@pytest.fixture
def criterion():
    """Record one pass/fail line for an acceptance criterion; returns ``ok``."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
