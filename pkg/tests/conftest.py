import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hsmd.dynamics import CollisionModel, Particle, Scenario

settings.register_profile("default", deadline=None, max_examples=100,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# Lines collected by the acceptance suite and echoed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_scenario(n, ys, vs, a=0.5, m=1.0, model=None, eps=None, **kw):
    eps = eps or [0.0] * len(ys)
    parts = [Particle(k, np.array(y, dtype=float).reshape(n), np.array(v, dtype=float).reshape(n), e)
             for k, (y, v, e) in enumerate(zip(ys, vs, eps))]
    return Scenario(n, model or CollisionModel.elastic(), m, a, parts, **kw)


@pytest.fixture
def head_on_pair():
    """n=2, a=1: centers (0,0) and (4,0) closing at speed 2, contact at t=1."""
    return make_scenario(2, [(0, 0), (4, 0)], [(1, 0), (-1, 0)], a=1.0)
