import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from scipy.linalg import solve_banded

from memsvi.core import ConvergenceError, Grid, SolverConfig
from memsvi.lcp import (
    DiscreteOperator,
    LcpProblem,
    NotAnMMatrix,
    assemble_laplacian,
    brute_force_obstacle,
    feasible_active_sets,
    pdas,
    psor,
    solve_obstacle,
)
from oracles import random_m_matrix, random_obstacle_problem


def test_assembly_small_example():
    op = assemble_laplacian(Grid(5))
    np.testing.assert_allclose(op.matrix.toarray(), [[8, -4, 0], [-4, 8, -4], [0, -4, 8]])
    shifted = assemble_laplacian(Grid(5), shift=3.0)
    np.testing.assert_allclose(shifted.matrix.toarray() - op.matrix.toarray(), 3 * np.eye(3))


def test_assembly_2d_is_kronecker_sum():
    g = Grid(6, 2)
    op = assemble_laplacian(g)
    t = assemble_laplacian(Grid(6)).matrix.toarray()
    eye = np.eye(4)
    np.testing.assert_allclose(op.matrix.toarray(), np.kron(t, eye) + np.kron(eye, t))
    op.check_m_matrix()


@pytest.mark.parametrize("dim", [1, 2])
def test_laplacian_on_eigenfunction_is_second_order(dim):
    errs = []
    for n in (21, 41, 81):
        g = Grid(n, dim)
        u = np.prod([np.sin(np.pi * (c + 1) / 2) for c in g.coordinates], axis=0)
        ui = g.restrict(u)
        exact = dim * np.pi ** 2 / 4 * ui
        errs.append(np.max(np.abs(assemble_laplacian(g).matvec(ui) - exact)))
    assert 3.5 < errs[0] / errs[1] < 4.5 and 3.5 < errs[1] / errs[2] < 4.5


def test_banded_and_csr_paths_agree():
    g = Grid(12)
    band = assemble_laplacian(g, shift=0.5)
    csr = DiscreteOperator.from_matrix(band.matrix)
    x = np.linspace(-1, 1, band.n)
    np.testing.assert_allclose(band.matvec(x), csr.matvec(x))
    np.testing.assert_allclose(band.solve(x), csr.solve(x))
    act = np.zeros(band.n, bool)
    act[[0, 4, 5]] = True
    lo = np.full(band.n, -1.0)
    np.testing.assert_allclose(band.solve_with_active(x, act, lo), csr.solve_with_active(x, act, lo))
    d = np.arange(band.n, dtype=float)
    np.testing.assert_allclose(band.with_diagonal(d).matrix.toarray(), csr.with_diagonal(d).matrix.toarray())


def test_unconstrained_case_is_linear_solve():
    g = Grid(31)
    op = assemble_laplacian(g)
    q = -0.5 * np.ones(op.n)
    for method in ("pdas", "psor"):
        res = solve_obstacle(LcpProblem(op, q), method)
        np.testing.assert_allclose(res.u, op.solve(q), atol=1e-10)
        assert not res.active.any()
        assert np.all(res.zeta == 0)


def test_strong_load_clamps_everything():
    g = Grid(9)
    op = assemble_laplacian(g)
    q = -1e4 * np.ones(op.n)
    lo = -np.ones(op.n)
    for res in (pdas(LcpProblem(op, q)), psor(LcpProblem(op, q)), brute_force_obstacle(LcpProblem(op, q))):
        np.testing.assert_array_equal(res.u, lo)
        assert res.active.all()
        np.testing.assert_allclose(res.zeta, q - op.matvec(lo))
        assert np.all(res.zeta <= 0)


def test_disabled_obstacle_equals_tridiagonal_solve():
    g = Grid(40)
    op = assemble_laplacian(g)
    q = -50 * np.ones(op.n)
    res = pdas(LcpProblem(op, q, lo=-np.inf))
    ref = solve_banded((1, 1), op.bands, q)
    np.testing.assert_allclose(res.u, ref, rtol=1e-12)
    assert res.u.min() < -1


@pytest.mark.parametrize("seed", range(20))
def test_random_eight_node_problems_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    op = assemble_laplacian(Grid(10), shift=float(rng.random() * 10))
    q = rng.normal(-20, 30, op.n)
    prob = LcpProblem(op, q)
    ref = brute_force_obstacle(prob)
    for res in (pdas(prob), psor(prob)):
        np.testing.assert_array_equal(res.active, ref.active)
        np.testing.assert_allclose(res.u, ref.u, atol=1e-10)


@pytest.mark.parametrize("seed", range(30))
def test_brute_force_finds_exactly_one_feasible_set(seed):
    rng = np.random.default_rng(1000 + seed)
    prob = random_obstacle_problem(rng, int(rng.integers(1, 9)))
    assert len(feasible_active_sets(prob)) == 1


def test_brute_force_trivial_cases_and_limits():
    op = assemble_laplacian(Grid(6))
    assert not brute_force_obstacle(LcpProblem(op, np.zeros(op.n))).active.any()
    assert brute_force_obstacle(LcpProblem(op, -1e3 * np.ones(op.n))).active.all()
    with pytest.raises(ValueError):
        feasible_active_sets(LcpProblem(assemble_laplacian(Grid(20)), np.zeros(18)))
    # a non-P matrix can leave no feasible set at all
    bad = LcpProblem(np.array([[-1.0]]), np.array([2.0]))
    with pytest.raises(ValueError):
        brute_force_obstacle(bad)


def test_pdas_2d_matches_brute_force():
    g = Grid(5, 2)
    op = assemble_laplacian(g)
    x, y = g.coordinates
    q = g.restrict(-20 * np.exp(-4 * (x * x + y * y)))
    prob = LcpProblem(op, q)
    ref = brute_force_obstacle(prob)
    res = pdas(prob)
    assert 0 < ref.active.sum() < op.n
    np.testing.assert_array_equal(res.active, ref.active)
    np.testing.assert_allclose(res.u, ref.u, atol=1e-10)


@pytest.mark.parametrize("seed", range(100))
def test_psor_and_pdas_agree_on_larger_instances(seed):
    rng = np.random.default_rng(5000 + seed)
    n = int(rng.integers(10, 201))
    prob = random_obstacle_problem(rng, n, sparse=True)
    a, b = pdas(prob), psor(prob)
    np.testing.assert_allclose(a.u, b.u, atol=1e-9)
    assert a.comp_residual < 1e-9 and a.residual < 1e-9


def test_pdas_warm_start_is_consistent():
    rng = np.random.default_rng(7)
    prob = random_obstacle_problem(rng, 10)
    cold = pdas(prob)
    warm = pdas(prob, active=cold.active)
    np.testing.assert_array_equal(warm.u, cold.u)
    assert warm.iterations == 1


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(2, 12))
def test_ordering_of_loads_is_preserved(seed, n):
    rng = np.random.default_rng(seed)
    m = random_m_matrix(rng, n)
    q1 = rng.normal(-0.5, 2, n) * np.diag(m)
    q2 = q1 + rng.random(n) * np.diag(m)
    u1 = pdas(LcpProblem(m, q1)).u
    u2 = pdas(LcpProblem(m, q2)).u
    assert np.all(u1 <= u2 + 1e-10)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 10))
def test_solution_satisfies_complementarity(seed, n):
    rng = np.random.default_rng(seed)
    prob = random_obstacle_problem(rng, n)
    res = pdas(prob)
    m = prob.operator.matrix.toarray()
    zeta = prob.q - m @ res.u
    assert np.all(res.u >= prob.lo - 1e-12)
    assert np.all(zeta <= 1e-9 * np.abs(prob.q).max())
    assert np.max(np.abs(zeta * (res.u - prob.lo))) < 1e-9 * max(1, np.abs(prob.q).max())


def test_m_matrix_check_rejects_bad_operators():
    with pytest.raises(NotAnMMatrix):
        solve_obstacle(LcpProblem(np.array([[2.0, 1.0], [1.0, 2.0]]), np.zeros(2)))
    with pytest.raises(NotAnMMatrix):
        solve_obstacle(LcpProblem(np.array([[2.0, -1.0], [-0.5, 2.0]]), np.zeros(2)))
    with pytest.raises(NotAnMMatrix):
        solve_obstacle(LcpProblem(np.array([[1.0, -2.0], [-2.0, 1.0]]), np.zeros(2)))
    with pytest.raises(ValueError):
        solve_obstacle(LcpProblem(np.eye(2), np.zeros(2)), method="newton")
    with pytest.raises(ValueError):
        LcpProblem(np.eye(3), np.zeros(2))


def test_iteration_budget_is_enforced():
    op = assemble_laplacian(Grid(101))
    prob = LcpProblem(op, -np.ones(op.n))
    with pytest.raises(ConvergenceError):
        psor(prob, SolverConfig(max_lcp_iter=3))
    with pytest.raises(ConvergenceError):
        pdas(LcpProblem(op, -1e3 * np.ones(op.n)), SolverConfig(max_lcp_iter=1))


def test_sparse_storage_for_large_2d_grids():
    g = Grid(129, 2)
    op = assemble_laplacian(g)
    assert sp.issparse(op.matrix) and op.matrix.nnz < 6 * op.n
