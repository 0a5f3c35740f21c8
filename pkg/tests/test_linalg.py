import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from pseudopar import linalg
from pseudopar.errors import (IncompatibleSource, PreconditionerError, SingularConstantsMatrix,
                              SolverDiverged)
from pseudopar.linalg import SparseSym, cg_solve, cg_solve_zero_mean, dense_solve
from pseudopar.surface import periodic_stiffness


def test_identity_one_iteration(rng):
    b = rng.standard_normal(5)
    x, rep = cg_solve(SparseSym(sp.identity(5)), b)
    assert np.allclose(x, b)
    assert rep.iterations == 1 and rep.converged


def test_two_by_two():
    # direct inversion: [[4,1],[1,3]]^{-1} [1,2] = [1/11, 7/11]
    x, rep = cg_solve(SparseSym(np.array([[4.0, 1.0], [1.0, 3.0]])), np.array([1.0, 2.0]), tol=1e-14)
    assert np.allclose(x, [1 / 11, 7 / 11], atol=1e-14)
    assert rep.final_residual <= 1e-14


def test_zero_rhs():
    x, rep = cg_solve(SparseSym(np.diag([1.0, 2.0])), np.zeros(2))
    assert np.all(x == 0) and rep.iterations == 0


def test_errors():
    with pytest.raises(PreconditionerError):
        cg_solve(SparseSym(np.array([[0.0, 1.0], [1.0, 2.0]])), np.ones(2))
    L = sp.diags([-np.ones(199), 2.0 * np.ones(200), -np.ones(199)], [-1, 0, 1])
    with pytest.raises(SolverDiverged) as info:
        cg_solve(SparseSym(L), np.ones(200), tol=1e-14, maxiter=3)
    assert not info.value.report.converged


def test_symmetry_check():
    with pytest.raises(ValueError):
        SparseSym(np.array([[1.0, 2.0], [0.0, 1.0]]))


@given(d=st.integers(2, 30), seed=st.integers(0, 10_000))
def test_cg_random_spd_converges_in_2d(d, seed):
    r = np.random.default_rng(seed)
    Q = r.standard_normal((d, d))
    A = Q @ Q.T + d * np.eye(d)
    b = r.standard_normal(d)
    x, rep = cg_solve(SparseSym(A), b, tol=1e-12)
    assert rep.iterations <= 2 * d
    assert np.linalg.norm(A @ x - b) <= 1e-11 * np.linalg.norm(b)


def test_zero_mean_pseudoinverse_oracle():
    L = periodic_stiffness(np.ones(4))
    mass = np.ones(4)
    b = np.array([1.0, -1.0, 1.0, -1.0]) * mass
    x, _ = cg_solve_zero_mean(L, b, mass, tol=1e-14)
    expected = np.linalg.pinv(L.toarray()) @ b   # pinv picks the mean-zero solution here (equal weights)
    assert np.allclose(x, expected, atol=1e-13)
    assert abs(mass @ x) < 1e-14
    assert np.allclose(L @ x, b, atol=1e-13)


def test_zero_mean_incompatible():
    L = periodic_stiffness(np.ones(6))
    mass = np.full(6, 1.0)
    with pytest.raises(IncompatibleSource):
        cg_solve_zero_mean(L, 2.0 * mass, mass)
    x, _ = cg_solve_zero_mean(L, np.zeros(6), mass)
    assert np.all(x == 0)


@given(seed=st.integers(0, 10_000), n=st.integers(3, 40))
def test_zero_mean_solution_property(seed, n):
    r = np.random.default_rng(seed)
    seg = r.uniform(0.2, 2.0, n)
    L = periodic_stiffness(seg)
    mass = 0.5 * (seg + np.roll(seg, 1))
    b = r.standard_normal(n)
    b -= b.sum() / n
    x, _ = cg_solve_zero_mean(L, b, mass, tol=1e-13)
    assert abs(mass @ x) <= 1e-12 * max(np.linalg.norm(x), 1e-300)
    assert np.linalg.norm(L @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_dense_examples():
    G = np.array([3.0, -1.0, 2.0])
    assert np.allclose(dense_solve(np.eye(3), G), G)
    # hand elimination: -2a + b = 1, a - 2b = 0  ->  a = -2/3, b = -1/3
    assert np.allclose(dense_solve([[-2.0, 1.0], [1.0, -2.0]], [1.0, 0.0]), [-2 / 3, -1 / 3],
                       atol=1e-15)
    with pytest.raises(SingularConstantsMatrix):
        dense_solve([[1.0, 1.0], [1.0, 1.0]], [1.0, 2.0])


@given(m=st.integers(1, 12), seed=st.integers(0, 10_000))
def test_dense_solve_inverts(m, seed):
    r = np.random.default_rng(seed)
    A = r.standard_normal((m, m)) + 3 * m * np.eye(m)
    G = r.standard_normal(m)
    c = dense_solve(A, G)
    assert np.linalg.norm(A @ c - G) <= 1e-12 * max(np.linalg.norm(G), 1e-300)
    c2 = dense_solve(A, A @ G)
    assert np.allclose(c2, G, atol=1e-10)


def test_default_tolerances():
    assert linalg.CG_TOL == 1e-10 and linalg.COMPAT_TOL == 1e-8
