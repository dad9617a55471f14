import numpy as np
import pytest

from slipcontrol.euler_stage import build_envelope, build_potential_flow
from slipcontrol.geometry import DomainSpec, build_domain


@pytest.fixture(scope="session")
def rect64():
    return build_domain(DomainSpec(nx=64, ny=64))


@pytest.fixture(scope="session")
def conveyor(rect64):
    env = build_envelope(1.0, 3.0)
    return rect64, env, build_potential_flow(rect64, env)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from tests_support import ACCEPTANCE

    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
