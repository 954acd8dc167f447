import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

import acceptance_report  # noqa: E402
from twophoton.model import EmitterChainParams  # noqa: E402

settings.register_profile(
    "default",
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
    derandomize=True,
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def params():
    return EmitterChainParams()


@pytest.fixture(scope="session")
def gamma(params):
    return params.gamma_tot


def pytest_terminal_summary(terminalreporter):
    lines = acceptance_report.summary_lines()
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
