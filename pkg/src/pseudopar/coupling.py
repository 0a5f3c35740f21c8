"""Interface fluxes in residual form, the constants matrix and the flux-constrained projection.

All fluxes are equation residuals ``∫ f φ − ∫ σ∇u·∇φ`` against nodal test
functions, which keeps the discrete divergence identities exact.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import fem, linalg
from .errors import StaleField
from .fem import CoefficientMap
from .mesh import INCLUSION, OUTER, Mesh
from .surface import build_surface_operator

STALE_FACTOR = 10.0


@dataclass(frozen=True)
class FluxFunctional:
    values: np.ndarray   # per loop node, flat trace layout
    totals: np.ndarray   # per component
    scale: np.ndarray    # per component, magnitude of the cancelling terms


@dataclass(frozen=True, eq=False)
class ConstantsSystem:
    A: np.ndarray
    lu: np.ndarray
    perm: np.ndarray
    sigma_out: float

    @property
    def m(self) -> int:
        return len(self.A)

    def solve(self, G) -> np.ndarray:
        return linalg.lu_solve(self.lu, self.perm, G)


def _outer_stiffness(mesh: Mesh, sigma_out: float):
    key = ("outer-stiffness", sigma_out, tuple(sorted(fem._FAULTS)))
    if key not in mesh._cache:
        mesh._cache[key] = fem.assemble_stiffness(
            mesh, CoefficientMap(outer=sigma_out, inclusion=0.0, membrane=0.0),
            mask=mesh.region == OUTER)
    return mesh._cache[key]


def _outer_residual(mesh: Mesh, sigma_out: float, f, u):
    """Nodal residual of the outer-region equation and the size of its terms."""
    load = fem.assemble_load(mesh, f, mask=mesh.region == OUTER)
    A = _outer_stiffness(mesh, sigma_out)
    u = np.asarray(u, dtype=float)
    return load - A @ u, np.abs(load) + abs(A.csr) @ np.abs(u)


def _check_solved(free, residual, size, tol, what):
    if free.size == 0:
        return
    r = np.linalg.norm(residual[free])
    scale = np.linalg.norm(size[free])
    if r > STALE_FACTOR * tol * scale + 1e-300:
        raise StaleField(f"{what}: residual on free nodes {r:.3e} exceeds {STALE_FACTOR}×tol "
                         f"(scale {scale:.3e})")


def jump_flux(mesh: Mesh, sigma: CoefficientMap, f, u, tol=linalg.CG_TOL) -> FluxFunctional:
    """Pairing of [σ ∂u/∂ν] with every surface hat, plus per-component totals."""
    system = fem.transmission_system(mesh, sigma)
    load = fem.assemble_load(mesh, f)
    u = np.asarray(u, dtype=float)
    residual = load - system.A @ u
    size = np.abs(load) + abs(system.A.csr) @ np.abs(u)
    _check_solved(system.free, residual, size, tol, "jump_flux")
    ids = mesh.loop_node_ids()
    values = residual[ids]
    op = build_surface_operator(mesh)
    return FluxFunctional(values, op.component_sums(values), op.component_sums(size[ids]))


def onesided_outer_flux(mesh: Mesh, sigma_out: float, f, u, i: int, tol=linalg.CG_TOL,
                        check=True) -> float:
    """∫_{Γ_i} σ_out ∂u/∂ν from the outer side, ν pointing into the outer region (1-based i)."""
    residual, size = _outer_residual(mesh, sigma_out, f, u)
    if check:
        outer_free = fem.exterior_system(mesh).free
        _check_solved(outer_free, residual, size, tol, "onesided_outer_flux")
    return float(residual[mesh.loops[i - 1].node_ids].sum())


def _all_onesided(mesh, sigma_out, f, u, tol, check=True):
    residual, size = _outer_residual(mesh, sigma_out, f, u)
    if check:
        _check_solved(fem.exterior_system(mesh).free, residual, size, tol, "outer flux")
    return np.array([residual[lp.node_ids].sum() for lp in mesh.loops]), residual


def boundary_flux(mesh: Mesh, sigma_out: float, f, ubar, tol=linalg.CG_TOL) -> float:
    """∫_{∂Ω} σ_out ∂ū/∂n, n the outer normal of the square."""
    residual, size = _outer_residual(mesh, sigma_out, f, ubar)
    _check_solved(fem.exterior_system(mesh).free, residual, size, tol, "boundary_flux")
    return float(-residual[mesh.boundary_nodes].sum())


def region_integral(mesh: Mesh, f, mask) -> float:
    return float(fem.assemble_load(mesh, f, mask=mask).sum())


def compute_targets(mesh: Mesh, sigma_out: float, f, ubar, tol=linalg.CG_TOL) -> np.ndarray:
    """Total outer-side currents ℓ_j the trace must carry for the surface problem to be solvable."""
    os_flux, residual = _all_onesided(mesh, sigma_out, f, ubar, tol)
    bflux = -residual[mesh.boundary_nodes].sum()
    ell = np.empty(mesh.n_components)
    for j in range(1, mesh.n_components + 1):
        mask = (mesh.region == OUTER) | ((mesh.region == INCLUSION) & (mesh.component == j))
        cross = os_flux.sum() - os_flux[j - 1]
        ell[j - 1] = -bflux - region_integral(mesh, f, mask) + cross
    return ell


def build_constants_system(mesh: Mesh, sigma_out: float, threads: int = 1,
                           tol=linalg.CG_TOL) -> ConstantsSystem:
    """a_ij = outer flux through Γ_i of the exterior harmonic equal to 1 on Γ_j only."""
    key = ("constants", sigma_out, tuple(sorted(fem._FAULTS)))
    if key in mesh._cache:
        return mesh._cache[key]
    op = build_surface_operator(mesh)
    m = mesh.n_components
    fem.exterior_system(mesh)  # build shared state before any worker threads

    def column(j):
        u = fem.solve_exterior_laplace(mesh, op.indicator(j), tol=tol)
        return _all_onesided(mesh, sigma_out, 0.0, u, tol)[0]

    if threads > 1 and m > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            cols = list(pool.map(column, range(m)))
    else:
        cols = [column(j) for j in range(m)]
    A = np.column_stack(cols)
    lu, perm = linalg.lu_factor(A)
    cs = ConstantsSystem(A, lu, perm, sigma_out)
    mesh._cache[key] = cs
    return cs


def project_to_Hl(cs: ConstantsSystem, mesh: Mesh, w, ell, tol=linalg.CG_TOL):
    """Shift each component of ``w`` by a constant so its exterior extension carries ``ell``.

    Returns ``(w_shifted, c)``.
    """
    w = np.asarray(w, dtype=float)
    op = build_surface_operator(mesh)
    u = fem.solve_exterior_laplace(mesh, w, tol=tol)
    flux = _all_onesided(mesh, cs.sigma_out, 0.0, u, tol)[0]
    c = cs.solve(np.asarray(ell, dtype=float) - flux)
    shifted = w.copy()
    for i in range(op.n_components):
        shifted[op.component_slice(i)] += c[i]
    return shifted, c
