from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from tcgen.dag import load_dag

REPO = Path(__file__).resolve().parents[1]
DAGS = REPO / "dags"

settings.register_profile("repo", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture
def dag():
    def _load(name):
        return load_dag(DAGS / f"{name}.json")
    return _load


# one line per acceptance criterion, printed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
