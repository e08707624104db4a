import cvxpy as cp
import numpy as np
import pytest

from gmrfsel.errors import ConvergenceError
from gmrfsel.qp import project_polyhedron, solve_qp


def random_problem(rng, d, k, lo=-1.0, hi=1.0):
    A = rng.normal(size=(d + 3, d))
    G = A.T @ A / (d + 3) + 0.05 * np.eye(d)
    b = rng.normal(size=d) * 3
    M = rng.normal(size=(k, d))
    return G, b, M, np.full(k, lo), np.full(k, hi)


def cvx_reference(G, b, M, lo, hi):
    x = cp.Variable(G.shape[0])
    obj = cp.Minimize(cp.quad_form(x, cp.psd_wrap(G)) - 2 * b @ x)
    cp.Problem(obj, [M @ x <= hi, M @ x >= lo]).solve(solver=cp.CLARABEL)
    return x.value


@pytest.mark.parametrize("d,k,seed", [(2, 10, 0), (4, 30, 1), (6, 60, 2), (9, 120, 3)])
def test_matches_cvxpy(d, k, seed):
    rng = np.random.default_rng(seed)
    G, b, M, lo, hi = random_problem(rng, d, k)
    res = solve_qp(G, b, 0.0, M, lo, hi, np.zeros(d))
    ref = cvx_reference(G, b, M, lo, hi)
    f = lambda a: a @ G @ a - 2 * b @ a
    assert np.all(M @ res.x <= hi + 1e-9) and np.all(M @ res.x >= lo - 1e-9)
    assert f(res.x) <= f(ref) + 1e-7 * max(1, abs(f(ref)))
    assert np.allclose(res.x, ref, atol=1e-4)


def test_interior_optimum_is_unconstrained_solution():
    rng = np.random.default_rng(4)
    G, b, M, lo, hi = random_problem(rng, 3, 12, -100, 100)
    res = solve_qp(G, b, 0.0, M, lo, hi, np.zeros(3))
    assert np.allclose(res.x, np.linalg.solve(G, b), atol=1e-5)


def test_projection_is_euclidean():
    rng = np.random.default_rng(5)
    d, k = 4, 25
    M = rng.normal(size=(k, d))
    lo, hi = -np.ones(k), np.ones(k)
    y = rng.normal(size=d) * 4
    x = project_polyhedron(y, M, lo, hi)
    v = cp.Variable(d)
    cp.Problem(cp.Minimize(cp.sum_squares(v - y)), [M @ v <= hi, M @ v >= lo]).solve(solver=cp.CLARABEL)
    assert np.all(M @ x <= hi + 1e-12) and np.all(M @ x >= lo - 1e-12)
    assert np.allclose(x, v.value, atol=1e-5)


def test_feasible_point_is_fixed():
    M = np.eye(2)
    x = project_polyhedron(np.array([0.3, -0.2]), M, -np.ones(2), np.ones(2))
    assert np.array_equal(x, [0.3, -0.2])


def test_iteration_cap_reports_best_iterate():
    rng = np.random.default_rng(6)
    G, b, M, lo, hi = random_problem(rng, 5, 40)
    G = G + np.diag([1e4, 0, 0, 0, 0])
    with pytest.raises(ConvergenceError) as info:
        solve_qp(G, b, 0.0, M, lo, hi, np.zeros(5), max_iter=2)
    assert info.value.best is not None and info.value.iterations == 2
