import numpy as np
import pytest

from spacetime_carreau import presets
from spacetime_carreau.kkt import OptControlProblem
from spacetime_carreau.mesh import DomainSpec, build_tensor_simplex_mesh
from spacetime_carreau.model import CarreauParams


def unit_mesh(d, N):
    return build_tensor_simplex_mesh(DomainSpec.unit(d), (N,) * (d + 1))


def small_problem(d=1, N=4, n=3.0, c=1.0, rho=1e-2, target=None, source=None, workers=1):
    """Problem on the centred box used by the tracking experiment."""
    dom = DomainSpec(d, (-0.5,) * d, (0.5,) * d, 1.0)
    if target is None:
        target = presets.gaussian_track(d, sharpness=10.0)
    return OptControlProblem(dom, (N,) * (d + 1), CarreauParams(n, c), rho,
                             source or presets.zero, target, workers)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
