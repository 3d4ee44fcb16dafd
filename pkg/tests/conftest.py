import pytest
from hypothesis import HealthCheck, settings

from backref.scenario import load_bundled, run_scenario

settings.register_profile(
    "backref",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("backref")


@pytest.fixture(scope="session")
def honest():
    return run_scenario(load_bundled("honest-3hop"))


@pytest.fixture(scope="session")
def two_circuit():
    return run_scenario(load_bundled("two-circuit"))


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
