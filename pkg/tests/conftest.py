import numpy as np
import pytest

from ltseval.scenario import build_scenario
from ltseval.testbed import ErrorModel, run_experiment
from ltseval.trajectory import NS_PER_S, Source, Trajectory


def line_traj(speed=1000.0, rate=100.0, duration=10.0, t0=0, yaw=None, has_vertical=True):
    n = int(round(duration * rate)) + 1
    t = t0 + np.round(np.arange(n) * NS_PER_S / rate).astype(np.int64)
    x = speed * (t - t0) / NS_PER_S
    xyz = np.column_stack([x, np.zeros(n), np.zeros(n)])
    y = None if yaw is None else np.full(n, float(yaw))
    return Trajectory(t, xyz, y, source=Source.GROUND_TRUTH, has_vertical=has_vertical)


@pytest.fixture(scope="session")
def dynamic_tc():
    return build_scenario("StandardDynamic", (10, 10), 63, seed=1)


@pytest.fixture(scope="session")
def zero_run(dynamic_tc):
    return run_experiment(dynamic_tc, ErrorModel(update_rate_hz=20))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import LINES
    except ImportError:
        return
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
