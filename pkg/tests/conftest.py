import numpy as np
import pytest

from fricid.dynamics import LinkInertialParams, PlanarArm


def _two_link_dicts():
    l1 = {"m": 1.3, "l": 0.45, "rx": 0.21, "ry": 0.015, "izz": 0.031}
    l2 = {"m": 0.8, "l": 0.35, "rx": 0.17, "ry": -0.02, "izz": 0.012}
    return l1, l2


@pytest.fixture
def two_link_dicts():
    return _two_link_dicts()


@pytest.fixture
def arm2():
    l1, l2 = _two_link_dicts()
    links = [LinkInertialParams(mass=d["m"], length=d["l"], com=(d["rx"], d["ry"], 0.0),
                                inertia=(0.01, 0.01, d["izz"], 0.0, 0.0, 0.0)) for d in (l1, l2)]
    return PlanarArm(links, gravity=9.81)


@pytest.fixture
def pendulum():
    link = LinkInertialParams(mass=1.0, length=0.5, com=(0.3, 0.0, 0.0),
                              inertia=(0.0, 0.0, 0.01, 0.0, 0.0, 0.0))
    return PlanarArm([link], gravity=9.81)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
