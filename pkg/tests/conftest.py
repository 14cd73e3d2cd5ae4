import math

import numpy as np
import pytest
import yaml

from circlelab.circlemap import GeneratorSet, MobiusPrimitive, TrigPrimitive, generators_from_config
from circlelab.cli import scenario_dir

S_MAT = np.array([[0, -1], [1, 0]])
U_MAT = np.array([[0, -1], [1, 1]])


def scenario_generators(name: str) -> GeneratorSet:
    cfg = yaml.safe_load((scenario_dir() / f"{name}.yaml").read_text())
    return generators_from_config(cfg["generators"])


@pytest.fixture(scope="session")
def psl():
    return GeneratorSet([("S", MobiusPrimitive(S_MAT), None), ("U", MobiusPrimitive(U_MAT), None)])


@pytest.fixture(scope="session")
def schottky():
    return scenario_generators("schottky")


@pytest.fixture(scope="session")
def torus():
    return scenario_generators("punctured-torus")


@pytest.fixture(scope="session")
def rot():
    return GeneratorSet([("r", TrigPrimitive.rotation(math.sqrt(2) - 1), None)])


@pytest.fixture(scope="session")
def rot3():
    return GeneratorSet([("s", TrigPrimitive.rotation(1 / 3), None)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def theta_of(p: int, q: int) -> float:
    """Circle coordinate of the projective point [p : q] (t = p / q)."""
    if q == 0:
        return 0.0
    return (0.5 + math.atan(p / q) / math.pi) % 1.0


# one summary line per acceptance criterion

_criteria = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance.py" not in report.nodeid or not name.startswith("test_criterion_"):
        return
    n = int(name.split("_")[2])
    if report.when == "call" or report.outcome != "passed":
        _criteria[n] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    import test_acceptance as acc

    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        status = "PASS" if _criteria[n] == "passed" else "FAIL"
        detail = acc.DETAILS.get(n, "")
        terminalreporter.write_line(f"criterion {n:2d} {status}  {acc.TITLES[n]}" + (f"  [{detail}]" if detail else ""))
