import shutil

import pytest

from xpomcp.evaluation.studies import bundled_template
from xpomcp.rules import parse_template
from xpomcp.trace import TraceStep

TIGER_NAMES = ("p_left", "p_right")


def tiger_step(p_right: float, action: int, run: int = 0, step: int = 0, optimal=None) -> TraceStep:
    return TraceStep(run, step, action, {"p_left": 1.0 - p_right, "p_right": p_right}, optimal)


@pytest.fixture(scope="session")
def tiger_template():
    return parse_template(bundled_template("tiger"), TIGER_NAMES)


@pytest.fixture(scope="session")
def velreg_template():
    return parse_template(bundled_template("velreg"), ("p_0", "p_1", "p_2"))


@pytest.fixture(scope="session", autouse=True)
def _solver_present():
    if shutil.which("z3") is None:
        pytest.exit("the z3 executable is required (pip install z3-solver)", returncode=2)


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
