import numpy as np
import pytest

from neumann_perturb.eigensolver import cluster, solve_gevp
from neumann_perturb.fem import assemble_pencil
from neumann_perturb.mesh import generate_disk, generate_square
from neumann_perturb.metric import MetricField


class Problem:
    """Mesh, metric, assembled pencil and clustered low spectrum."""

    def __init__(self, mesh, k=8, cluster_tol=1e-3):
        self.mesh = mesh
        self.g = MetricField.identity(mesh.n_vertices)
        self.K, self.M = assemble_pencil(mesh, self.g)
        self.pairs = solve_gevp(self.K, self.M, k)
        self.clusters = cluster(self.pairs, cluster_tol, self.M)

    @property
    def values(self):
        return np.array([p.value for p in self.pairs])


_cache = {}


def square_problem(n):
    key = ("square", n)
    if key not in _cache:
        _cache[key] = Problem(generate_square(n))
    return _cache[key]


def disk_problem(rings):
    key = ("disk", rings)
    if key not in _cache:
        _cache[key] = Problem(generate_disk(rings))
    return _cache[key]


@pytest.fixture(scope="session")
def square16():
    return square_problem(16)


@pytest.fixture(scope="session")
def square32():
    return square_problem(32)


@pytest.fixture(scope="session")
def disk8():
    return disk_problem(8)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
