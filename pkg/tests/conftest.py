"""Shared fixtures: generated benchmark data is cached per session."""
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from breakid.forward import generate_case

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@lru_cache(maxsize=None)
def case_series(case_id: int, n_times: int = 10):
    return generate_case(case_id, n_times=n_times)


@pytest.fixture(scope="session")
def series_of():
    return case_series


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


@pytest.fixture(scope="session")
def criterion():
    """``criterion(n, ok, detail)`` records one acceptance check and asserts it."""
    def record(n, ok, detail=""):
        prev = ACCEPTANCE.get(n, (True, []))
        ACCEPTANCE[n] = (prev[0] and bool(ok), prev[1] + [detail])
        assert ok, detail
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, details = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  "
                                    + "; ".join(d for d in details if d))
