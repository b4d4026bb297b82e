from fractions import Fraction

import numpy as np
import pytest

from hicon.geometry import CompositeGeometry, InclusionShape
from hicon.material import DistSquaredLaw
from hicon.mesh import CellMesh, MacroMesh

SWEEP = (Fraction(1, 4), Fraction(1, 8), Fraction(1, 16))


@pytest.fixture(scope="session")
def law():
    return DistSquaredLaw()


def make_mesh(eps, gamma=1.0, m=8, **kw):
    return MacroMesh(CompositeGeometry(epsilon=Fraction(eps), gamma_exponent=gamma, **kw), m)


@pytest.fixture(scope="session")
def mesh8():
    return make_mesh(Fraction(1, 8), gamma=0.5)


@pytest.fixture(scope="session")
def mesh4():
    return make_mesh(Fraction(1, 4), gamma=0.5)


@pytest.fixture(scope="session")
def cell8():
    return CellMesh(8, InclusionShape())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_clamped(mesh, rng):
    v = rng.normal(size=(mesh.n_nodes, 2))
    v[mesh.gamma_nodes] = 0.0
    return v


# lines recorded by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
