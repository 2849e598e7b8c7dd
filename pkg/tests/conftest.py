import numpy as np
import pytest

from spinreg.experiments import ScenarioConfig, calibration_for, run_scenario
from spinreg.register import Register
from spinreg.spin_model import table1

# criterion lines collected by the acceptance tests, printed at the end
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    def key(line):
        n = line.split()[1].rstrip(":")
        return (0, int(n)) if n.isdigit() else (1, n)

    for line in sorted(ACCEPTANCE_LINES, key=key):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def run_dir(tmp_path_factory):
    """Shared output directory, so gate calibrations are computed once."""
    return tmp_path_factory.mktemp("runs")


@pytest.fixture(scope="session")
def params():
    return table1()


@pytest.fixture(scope="session")
def coherent():
    return table1().coherent_only()


@pytest.fixture(scope="session")
def coh_reg(coherent):
    return Register(coherent)


@pytest.fixture(scope="session")
def calib(run_dir, params):
    return calibration_for(ScenarioConfig("calibrate", out=str(run_dir)), params)


@pytest.fixture(scope="session")
def scenario(run_dir):
    """run_scenario with per-session caching keyed by name and knobs."""
    cache = {}

    def run(name, **knobs):
        key = (name, tuple(sorted((k, repr(v)) for k, v in knobs.items())))
        if key not in cache:
            cfg = ScenarioConfig(name, knobs=dict(knobs), out=str(run_dir), seed=0)
            cache[key] = run_scenario(cfg)
        return cache[key]

    return run


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
