"""Sparse symmetric storage and the iterative/dense solvers used by every module."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import (IncompatibleSource, PreconditionerError, SingularConstantsMatrix,
                     SolverDiverged)

CG_TOL = 1e-10
COMPAT_TOL = 1e-8


class SparseSym:
    """Symmetric matrix in compressed-row form (both triangles stored)."""

    def __init__(self, matrix, is_spd_expected: bool = True, check: bool = True):
        csr = sp.csr_matrix(matrix, dtype=float)
        csr.sum_duplicates()
        csr.sort_indices()
        if csr.shape[0] != csr.shape[1]:
            raise ValueError(f"matrix must be square, got {csr.shape}")
        self.csr = csr
        self.is_spd_expected = is_spd_expected
        if check:
            self._check_symmetry()

    def _check_symmetry(self):
        diff = self.csr - self.csr.T
        scale = max(abs(self.csr).max() if self.csr.nnz else 0.0, 1e-300)
        if diff.nnz and abs(diff).max() > 1e-12 * scale:
            raise ValueError("matrix is not numerically symmetric")

    @property
    def dim(self) -> int:
        return self.csr.shape[0]

    @property
    def row_offsets(self):
        return self.csr.indptr

    @property
    def col_indices(self):
        return self.csr.indices

    @property
    def values(self):
        return self.csr.data

    def diagonal(self) -> np.ndarray:
        return self.csr.diagonal()

    def __matmul__(self, x):
        return self.csr @ x

    def toarray(self):
        return self.csr.toarray()

    def submatrix(self, rows, cols) -> sp.csr_matrix:
        return self.csr[rows][:, cols]

    def principal(self, idx) -> "SparseSym":
        return SparseSym(self.csr[idx][:, idx], self.is_spd_expected, check=False)


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    final_residual: float
    converged: bool


def _as_sparse(A):
    return A if isinstance(A, SparseSym) else SparseSym(A)


def _jacobi(A: SparseSym):
    d = A.diagonal()
    if np.any(d == 0.0):
        bad = int(np.flatnonzero(d == 0.0)[0])
        raise PreconditionerError(f"zero diagonal entry at row {bad}")
    return 1.0 / d


def _pcg(A, b, tol, maxiter, x0=None, project=None):
    csr = A.csr
    inv_diag = _jacobi(A)
    n = len(b)
    if maxiter is None:
        maxiter = max(10 * n, 100)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, True)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if project is not None:
        x = project(x)
    r = b - csr @ x
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    it = 0
    res = np.linalg.norm(r) / bnorm
    while it < maxiter:
        if res <= tol:
            # guard against drift of the recursive residual
            r = b - csr @ x
            res = np.linalg.norm(r) / bnorm
            if res <= tol:
                return x, SolveReport(it, float(res), True)
            z = inv_diag * r
            p = z.copy()
            rz = r @ z
        q = csr @ p
        pq = p @ q
        if pq <= 0.0:
            break
        a = rz / pq
        x += a * p
        if project is not None:
            x = project(x)
        r -= a * q
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
        res = np.linalg.norm(r) / bnorm
    r = b - csr @ x
    res = float(np.linalg.norm(r) / bnorm)
    report = SolveReport(it, res, res <= tol)
    if not report.converged:
        raise SolverDiverged(f"CG stopped after {it} iterations at relative residual {res:.3e}",
                             report)
    return x, report


def cg_solve(A, b, tol: float = CG_TOL, maxiter: int | None = None, x0=None):
    """Jacobi-preconditioned CG; returns ``(x, SolveReport)``."""
    A = _as_sparse(A)
    b = np.asarray(b, dtype=float)
    if b.shape != (A.dim,):
        raise ValueError(f"right-hand side has shape {b.shape}, expected ({A.dim},)")
    return _pcg(A, b, tol, maxiter, x0)


def weighted_mean(x, weights):
    return float(weights @ x / weights.sum())


def cg_solve_zero_mean(A, b, weights, tol: float = CG_TOL, maxiter: int | None = None,
                       compat_tol: float = COMPAT_TOL, scale: float | None = None):
    """Solve a semidefinite system whose kernel is the constants.

    ``b`` is a load vector (already integrated against hat functions), so
    solvability means ``sum(b) == 0``; equivalently the weighted mean of the
    density ``b / weights`` vanishes. The returned solution has
    ``weights @ x == 0`` and every iterate is projected onto that subspace.
    """
    A = _as_sparse(A)
    b = np.asarray(b, dtype=float)
    w = np.asarray(weights, dtype=float)
    if np.any(w <= 0.0):
        raise ValueError("weights must be strictly positive")
    total = b.sum()
    if not np.any(b):
        return np.zeros_like(b), SolveReport(0, 0.0, True)
    if scale is None:
        scale = np.abs(b).sum()
    if abs(total) > compat_tol * scale:
        raise IncompatibleSource(
            f"source total {total:.3e} is not compatible (relative {abs(total) / scale:.3e})")
    b = b - total * w / w.sum()
    wsum = w.sum()

    def project(x):
        return x - (w @ x) / wsum

    x, report = _pcg(A, b, tol, maxiter, project=project)
    return project(x), report


def dense_solve(A, G, *, pivot_tol: float = 1e-14):
    """Gaussian elimination with partial pivoting for the small constants system."""
    M = np.array(A, dtype=float)
    rhs = np.array(G, dtype=float)
    m = len(rhs)
    if M.shape != (m, m):
        raise ValueError(f"matrix shape {M.shape} does not match vector length {m}")
    if m > 64:
        raise ValueError("dense_solve is limited to m <= 64")
    lu, perm = lu_factor(M, pivot_tol=pivot_tol)
    return lu_solve(lu, perm, rhs)


def lu_factor(A, *, pivot_tol: float = 1e-14):
    """In-place LU with row pivoting; returns ``(lu, perm)``."""
    M = np.array(A, dtype=float)
    m = len(M)
    norm = np.abs(M).max() if m else 0.0
    perm = np.arange(m)
    for k in range(m):
        p = k + int(np.argmax(np.abs(M[k:, k])))
        if abs(M[p, k]) <= pivot_tol * norm or norm == 0.0:
            raise SingularConstantsMatrix(f"pivot {k} is {abs(M[p, k]):.3e} (matrix norm {norm:.3e})")
        if p != k:
            M[[k, p]] = M[[p, k]]
            perm[[k, p]] = perm[[p, k]]
        M[k + 1:, k] /= M[k, k]
        M[k + 1:, k + 1:] -= np.outer(M[k + 1:, k], M[k, k + 1:])
    return M, perm


def lu_solve(lu, perm, G):
    m = len(perm)
    y = np.asarray(G, dtype=float)[perm].copy()
    for k in range(m):
        y[k] -= lu[k, :k] @ y[:k]
    for k in range(m - 1, -1, -1):
        y[k] = (y[k] - lu[k, k + 1:] @ y[k + 1:]) / lu[k, k]
    return y
