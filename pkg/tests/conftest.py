import numpy as np
import pytest
from hypothesis import settings

from maxwell_afem.mesh import DomainSpec, Mesh, generate_structured

settings.register_profile("default", deadline=None, max_examples=25)
settings.load_profile("default")

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


REF_TET = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])


@pytest.fixture
def ref_tet_mesh():
    return Mesh(REF_TET, [[0, 1, 2, 3]])


@pytest.fixture(scope="session")
def cube2():
    return generate_structured(DomainSpec.unit_cube(), (2, 2, 2))


@pytest.fixture(scope="session")
def cube3():
    return generate_structured(DomainSpec.unit_cube(), (3, 3, 3))


@pytest.fixture(scope="session")
def fichera2():
    return generate_structured(DomainSpec.fichera(), (2, 2, 2))


def two_tet_mesh():
    """Two tets glued along the face (1, 2, 3)."""
    x = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [0.9, 0.8, 0.7]])
    return Mesh(x, [[0, 1, 2, 3], [4, 1, 3, 2]])
