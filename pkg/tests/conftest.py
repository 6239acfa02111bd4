import json
from pathlib import Path

import numpy as np
import pytest

from nminus1.case_io import load_case
from nminus1.grid import Branch, Bus, BusKind, GridCase

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def case14():
    return load_case("case14")


@pytest.fixture(scope="session")
def case118():
    return load_case("case118")


@pytest.fixture(scope="session")
def reference():
    return json.loads((DATA / "reference_solutions.json").read_text())


def make_two_bus(pd=0.5, qd=0.2, r=0.0, x=0.1, b=0.0):
    """Slack at bus 0 (1.0 pu), a PQ load at bus 1, one line."""
    return GridCase(
        name="two_bus",
        base_mva=100.0,
        buses=(
            Bus(0, BusKind.SLACK, vm_setpoint=1.0, pg=max(pd, 1e-3)),
            Bus(1, BusKind.PQ, pd=pd, qd=qd),
        ),
        branches=(Branch(0, 0, 1, r=r, x=x, b_charging=b),),
        total_generation=max(pd, 1e-3),
    )


def make_path3():
    return GridCase(
        name="path3",
        base_mva=100.0,
        buses=(
            Bus(0, BusKind.SLACK, vm_setpoint=1.0, pg=0.3),
            Bus(1, BusKind.PV, vm_setpoint=1.02, pg=0.2),
            Bus(2, BusKind.PQ, pd=0.4, qd=0.1),
        ),
        branches=(Branch(0, 0, 1, r=0.01, x=0.1), Branch(1, 1, 2, r=0.02, x=0.08, b_charging=0.02)),
        total_generation=0.5,
    )


@pytest.fixture
def two_bus():
    return make_two_bus()


@pytest.fixture
def path3():
    return make_path3()


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
