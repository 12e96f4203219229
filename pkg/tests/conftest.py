import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from superlab import nmr


@pytest.fixture(scope="session")
def mol():
    return nmr.default_molecule()


@pytest.fixture()
def rng():
    return np.random.default_rng(20260814)


@pytest.fixture(scope="session")
def two_spin_mol():
    """Minimal register for channel and Hamiltonian unit checks."""
    return nmr.Molecule(
        spins=(
            nmr.Spin("A1", 0.0, 5.0, 1.0, 1.0),
            nmr.Spin("B1", 300.0, 8.0, 0.5, 1.0),
        ),
        couplings=(nmr.Coupling(1, 2, 50.0, "weak"),),
    )


@pytest.fixture(scope="session")
def one_spin_mol():
    return nmr.Molecule(spins=(nmr.Spin("A1", 0.0, 5.0, 1.0, 1.0),), couplings=())


# ---------------------------------------------------------------------------
# Acceptance-criteria verdict lines: one "ACCEPTANCE <n> PASS|FAIL" per
# criterion test, printed in the terminal summary regardless of capture.

_ACCEPTANCE_RESULTS = {}


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    name = report.nodeid.rsplit("::", 1)[-1]
    prefix = "test_criterion_"
    if name.startswith(prefix):
        label = name[len(prefix):].split("[")[0]
        _ACCEPTANCE_RESULTS[label] = report.outcome == "passed"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")

    def order(label):
        digits = "".join(ch for ch in label if ch.isdigit())
        return (int(digits), label)

    for label in sorted(_ACCEPTANCE_RESULTS, key=order):
        verdict = "PASS" if _ACCEPTANCE_RESULTS[label] else "FAIL"
        terminalreporter.write_line(f"ACCEPTANCE {label} {verdict}")
