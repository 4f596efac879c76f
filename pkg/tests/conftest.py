import sys
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp

sys.path.insert(0, str(Path(__file__).parent))

from pdcp_greeks import experiments as ex  # noqa: E402
from pdcp_greeks.market import PUT_1D, PUT_ON_AVERAGE_2D  # noqa: E402
from pdcp_greeks.operator import DiscreteProblem  # noqa: E402

# Lines "PASS|FAIL criterion N: ..." appended by test_acceptance.py, echoed in the summary.
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)


def scalar_problem(a: float, u0: float = -1e30) -> DiscreteProblem:
    """1x1 system U' = a U with an obstacle far below (unconstrained)."""
    return DiscreteProblem(
        a_matrix=sp.csr_matrix(np.array([[a]])),
        u0=np.array([u0]),
        dims=1,
        m=1,
        grids=(),
        dirichlet_mask=np.array([False]),
        r=0.0,
        T=1.0,
    )


@pytest.fixture(scope="session")
def problem_1d():
    return ex.assemble(PUT_1D, 200)


@pytest.fixture(scope="session")
def reference_1d(problem_1d):
    return ex.build_reference(PUT_1D, 200, problem=problem_1d)


@pytest.fixture(scope="session")
def problem_2d():
    return ex.assemble(PUT_ON_AVERAGE_2D, 100)


@pytest.fixture(scope="session")
def reference_2d(problem_2d):
    return ex.build_reference(PUT_ON_AVERAGE_2D, 100, problem=problem_2d)
