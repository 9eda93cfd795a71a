import numpy as np
import pytest

from tapopt.sim.fixtures import load_bundled

TWO_BUS = """\
bus s 4.16 a
bus r 4.16 a
slack s 1.0 0.0
branch s.a r.a 0.01 0.02
load r.a 100 50 house
"""


@pytest.fixture(scope="session")
def feeder13():
    return load_bundled("feeder13")


@pytest.fixture(scope="session")
def feeder40():
    return load_bundled("feeder40")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
