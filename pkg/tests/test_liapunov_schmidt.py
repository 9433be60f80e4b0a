import numpy as np
import pytest

from neumann_perturb.eigensolver import solve_window
from neumann_perturb.errors import WindowError
from neumann_perturb.fem import assemble_derivatives
from neumann_perturb.liapunov_schmidt import LiapunovSchmidt
from neumann_perturb.metric import SymTensorField, random_perturbation
from neumann_perturb.perturbation import discrete_branch_matrix, isolation_window

from conftest import square_problem


@pytest.fixture(scope="module")
def setup():
    prob = square_problem(16)
    c = prob.clusters[1]
    T = SymTensorField.constant(prob.mesh.n_vertices, 1, 0, 2)
    _, half = isolation_window(prob.K, prob.M, c.mean)
    return prob, c, T, LiapunovSchmidt(prob.mesh, prob.g, T, c), half


def test_no_correction_at_t0(setup):
    prob, c, T, ls, half = setup
    for j in range(2):
        w = ls.complement_solve(0.0, c.mean, j)
        assert np.linalg.norm(w) < 1e-8


def test_correction_is_first_order_in_t(setup):
    prob, c, T, ls, half = setup
    ts = [0.0025, 0.005, 0.01]
    norms = [np.linalg.norm(ls.complement_solve(t, c.mean, 0)) for t in ts]
    slope = np.polyfit(np.log(ts), np.log(norms), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.1)


@pytest.mark.parametrize("t", [0.0, 0.01])
def test_complement_equations_hold(setup, t):
    prob, c, T, ls, half = setup
    red = ls.reduction(t)
    lam = c.mean + 0.3
    W = red.complement_solve(lam)
    np.testing.assert_allclose(c.vectors.T @ (red.M @ W), 0, atol=1e-10)
    assert red.complement_residual(lam, W) <= 1e-9 * abs(red.K).max()


def test_reduced_matrix_at_t0(setup):
    prob, c, T, ls, half = setup
    for lam in (c.mean - 0.2, c.mean, c.mean + 0.5):
        A = ls.reduced_matrix(0.0, lam)
        np.testing.assert_allclose(A.matrix, np.diag(lam - c.values), atol=1e-9)
        assert A.asymmetry <= 1e-6


def test_reduced_matrix_derivatives(setup):
    prob, c, T, ls, half = setup
    np.testing.assert_allclose(ls.dA_dlam(), np.eye(2), atol=1e-6)
    dA = ls.dA_dlam(t=0.01)
    assert np.max(np.abs(dA - np.eye(2))) < 0.1
    dK, dM = assemble_derivatives(prob.mesh, prob.g, T)
    np.testing.assert_allclose(ls.dA_dt(), -discrete_branch_matrix(c, dK, dM).matrix, atol=1e-6)


@pytest.mark.parametrize("t", [0.005, 0.01, 0.02])
def test_roots_are_pencil_eigenvalues(setup, t):
    prob, c, T, ls, half = setup
    roots = ls.det_roots(t, half)
    K, M = ls.pencil(t)
    direct = [p.value for p in solve_window(K, M, c.mean - half, c.mean + half)]
    assert len(roots) == 2
    np.testing.assert_allclose(roots, direct, rtol=1e-7)


def test_roots_at_t0(setup):
    prob, c, T, ls, half = setup
    np.testing.assert_allclose(ls.det_roots(0.0, half), c.values, rtol=1e-9)


def test_root_count_over_t_ball():
    prob = square_problem(16)
    c = prob.clusters[1]
    _, half = isolation_window(prob.K, prob.M, c.mean)
    ls = LiapunovSchmidt(prob.mesh, prob.g, random_perturbation(prob.mesh, 6), c)
    for t in np.linspace(-0.03, 0.03, 7):
        assert len(ls.det_roots(t, half)) == c.multiplicity


def test_window_error_when_too_narrow(setup):
    prob, c, T, ls, half = setup
    with pytest.raises(WindowError):
        ls.det_roots(0.02, 1e-6)


def test_smooth_in_t_and_lambda(setup):
    prob, c, T, ls, half = setup
    # second divided differences stay bounded on a small grid (no jumps)
    h = 0.005
    for lam in (c.mean - 0.5, c.mean + 0.5):
        a = [ls.reduced_matrix(t, lam).matrix for t in (-h, 0.0, h)]
        assert np.max(np.abs(a[0] - 2 * a[1] + a[2])) / h**2 < 1e4
    a = [ls.reduced_matrix(0.01, lam).matrix for lam in (c.mean - 0.1, c.mean, c.mean + 0.1)]
    assert np.max(np.abs(a[0] - 2 * a[1] + a[2])) / 0.01 < 1e2


def test_asymmetry_stays_at_roundoff_level():
    vals = []
    for n in (8, 16):
        prob = square_problem(n)
        c = prob.clusters[1]
        ls = LiapunovSchmidt(prob.mesh, prob.g, random_perturbation(prob.mesh, 2), c)
        vals.append(ls.reduced_matrix(0.02, c.mean + 0.1).asymmetry)
    assert max(vals) <= 1e-6
