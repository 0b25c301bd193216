import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sepsim.cli import data_path, load_system
from sepsim.controllers import DomainContext
from sepsim.gait import load_gait
from sepsim.multibody import Joint, LinkParams, RobotModel

settings.register_profile("sepsim", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("sepsim")


def double_pendulum(gravity=9.81, base="free"):
    """Two revolute links below a planar base; actuators on both hinges."""
    links = [
        ("base", LinkParams(1.5, 0.2, 0.1, 0.01)),
        ("l1", LinkParams(1.0, 0.5, 0.25, 0.02)),
        ("l2", LinkParams(0.7, 0.4, 0.15, 0.015)),
    ]
    joints = [Joint("B", "planar-base"), Joint("q1", "revolute", "base"), Joint("q2", "revolute", "l1")]
    return RobotModel(links, joints, [{"q1": 1.0}, {"q2": 1.0}], gravity)


def point_mass(mass=2.0, gravity=9.81):
    """A single planar-base link with its mass at the base origin."""
    return RobotModel([("p", LinkParams(mass, 0.1, 0.0, 1e-3))], [Joint("B", "planar-base")], [], gravity)


@pytest.fixture(scope="session")
def model1():
    return load_system(data_path("model1.yaml"))


@pytest.fixture(scope="session")
def model2():
    return load_system(data_path("model2.yaml"))


@pytest.fixture(scope="session")
def ref_gait():
    return load_gait(data_path("reference_gait.yaml"))


@pytest.fixture(scope="session")
def contexts(model1, ref_gait):
    return {v: DomainContext(model1, v, ref_gait[v]) for v in ("pt", "pw")}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict = {}


def record_criterion(number: int, title: str, passed: bool, detail: str):
    ACCEPTANCE_LINES[number] = f"{'PASS' if passed else 'FAIL'}  criterion {number}: {title}  [{detail}]"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
