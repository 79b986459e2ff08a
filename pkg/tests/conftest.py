import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gpdr.evaluation import Scenario, run_experiment

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"


@pytest.fixture(scope="session")
def full_sim_records():
    """Replicated full-simulation run (nonlinear mu, homogeneous effect, n=250), shared across modules."""
    sc = Scenario.from_dict(json.loads((SCENARIOS / "full_nonlinear_homogeneous.json").read_text()))
    records = run_experiment(sc)
    per_rep = [r for r in records if r.replication != "mean"]
    means = {r.method: r for r in records if r.replication == "mean"}
    return sc, per_rep, means


ACCEPTANCE_LINES: dict = {}


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""

    def record(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
