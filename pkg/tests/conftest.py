import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("fbflow", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("fbflow")

SEED = int(os.environ.get("FBFLOW_SEED", "42"))


@pytest.fixture
def rng():
    return np.random.default_rng(SEED)


_ACCEPTANCE = []


@pytest.fixture
def criterion():
    """Record one acceptance line: criterion(k, passed, detail)."""
    def record(k, passed, detail):
        line = f"criterion {k:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
