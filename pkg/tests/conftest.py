from pathlib import Path

import pytest

from pcmmap.circuit import load_circuit
from pcmmap.partition import VariablePartition

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture(scope="session")
def fig1():
    return load_circuit(FIXTURES / "fig1.json")


@pytest.fixture(scope="session")
def fig1_doc(fig1):
    return fig1.to_document()


@pytest.fixture(scope="session")
def q34(fig1):
    return VariablePartition.from_names(fig1, [], ["X3", "X4"], ["X1", "X2"])


@pytest.fixture
def fixtures_dir():
    return FIXTURES


# one line per acceptance criterion, printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda l: int(l.split("[")[1].split("]")[0])):
            terminalreporter.write_line(line)
