import numpy as np
import pytest

from fracfem import generate_ball_mesh, generate_cube_mesh


@pytest.fixture(scope="session")
def cube2():
    return generate_cube_mesh(4, 2)


@pytest.fixture(scope="session")
def cube3():
    return generate_cube_mesh(4, 3)


@pytest.fixture(scope="session")
def ball6():
    return generate_ball_mesh(6)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def random_interior_point(mesh, rng):
    e = int(rng.integers(mesh.num_simplices))
    b = rng.dirichlet(np.ones(mesh.dim + 1))
    return e, b @ mesh.vertices[mesh.simplices[e]]


# one summary line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def record_criterion(number, ok, detail):
    ACCEPTANCE[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE, key=str):
            terminalreporter.write_line(ACCEPTANCE[k])
