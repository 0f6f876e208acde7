import sys

import numpy as np
import pytest
from hypothesis import settings

from sbmrom.geometry import ParamBox, classify
from sbmrom.mesh import build_background_mesh

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")

CHANNEL = (-2.0, 2.0, -1.0, 1.0)


@pytest.fixture(scope="session")
def coarse_mesh():
    return build_background_mesh(CHANNEL, 0.25)


@pytest.fixture(scope="session")
def desk_mesh():
    return build_background_mesh(CHANNEL, 0.1)


@pytest.fixture(scope="session")
def aligned_box():
    # corners on nodes of the h=0.25 grid, so each surrogate edge maps to one feature
    return ParamBox((0.0, 0.0), (0.5, 0.25))


@pytest.fixture(scope="session")
def coarse_surrogate(coarse_mesh, aligned_box):
    return classify(coarse_mesh, aligned_box)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(lines):
        terminalreporter.write_line(lines[k])
