"""P1 finite elements on labelled triangulations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import linalg
from .errors import CoefficientError, InvalidField
from .linalg import SparseSym
from .mesh import INCLUSION, MEMBRANE, OUTER, Mesh

# fault injection for `verify --inject-fault`; never enabled in normal runs
_FAULTS: set = set()


def set_faults(names=()):
    _FAULTS.clear()
    _FAULTS.update(names)


@dataclass(frozen=True)
class CoefficientMap:
    """Region-wise constant coefficient; ``None`` means "not defined"."""

    outer: float | None = None
    inclusion: float | None = None
    membrane: float | None = None

    def __post_init__(self):
        for name in ("outer", "inclusion", "membrane"):
            v = getattr(self, name)
            if v is not None and not (np.isfinite(v) and v >= 0):
                raise ValueError(f"coefficient for {name} must be finite and >= 0, got {v!r}")

    def per_triangle(self, mesh: Mesh) -> np.ndarray:
        values = np.empty(len(mesh.triangles))
        for kind, name in ((OUTER, "outer"), (INCLUSION, "inclusion"), (MEMBRANE, "membrane")):
            mask = mesh.region == kind
            if not mask.any():
                continue
            v = getattr(self, name)
            if v is None:
                raise CoefficientError(f"no coefficient given for region {name!r}")
            values[mask] = v
        return values


def hat_gradients(mesh: Mesh):
    """Per-triangle gradients of the three local hat functions, shape (T, 3, 2)."""
    if "hat_gradients" not in mesh._cache:
        p = mesh.nodes[mesh.triangles]
        area2 = 2.0 * mesh.areas()
        g = np.empty((len(p), 3, 2))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            g[:, i, 0] = (p[:, j, 1] - p[:, k, 1]) / area2
            g[:, i, 1] = (p[:, k, 0] - p[:, j, 0]) / area2
        g.setflags(write=False)
        mesh._cache["hat_gradients"] = g
    return mesh._cache["hat_gradients"]


def element_stiffness(points) -> np.ndarray:
    """Local matrix of  ∫_T ∇φ_i·∇φ_j  for a single triangle."""
    p = np.asarray(points, dtype=float)
    area2 = (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[2, 0] - p[0, 0]) * (p[1, 1] - p[0, 1])
    g = np.array([[p[(i + 1) % 3, 1] - p[(i + 2) % 3, 1],
                   p[(i + 2) % 3, 0] - p[(i + 1) % 3, 0]] for i in range(3)]) / area2
    return 0.5 * abs(area2) * g @ g.T


def assemble_stiffness(mesh: Mesh, coef: CoefficientMap, mask=None) -> SparseSym:
    """Global  Σ_T coef(T) ∫_T ∇φ_i·∇φ_j ; ``mask`` restricts to some triangles."""
    c = coef.per_triangle(mesh)
    if mask is not None:
        c = np.where(mask, c, 0.0)
    g = hat_gradients(mesh)
    local = np.einsum("tid,tjd->tij", g, g) * (mesh.areas() * c)[:, None, None]
    if "offdiag-sign" in _FAULTS:
        off = ~np.eye(3, dtype=bool)
        local[:, off] *= -1.0
    keep = c != 0.0
    tris = mesh.triangles[keep]
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    n = mesh.n_nodes
    A = sp.coo_matrix((local[keep].ravel(), (rows, cols)), shape=(n, n)).tocsr()
    return SparseSym(A, check=False)


def lumped_weights(mesh: Mesh, mask=None) -> np.ndarray:
    """Entry i = one third of the area of the (masked) triangles around node i."""
    area = mesh.areas() if mask is None else np.where(mask, mesh.areas(), 0.0)
    w = np.zeros(mesh.n_nodes)
    np.add.at(w, mesh.triangles.ravel(), np.repeat(area / 3.0, 3))
    return w


def assemble_load(mesh: Mesh, f, mask=None) -> np.ndarray:
    """Lumped load of nodal samples ``f`` (scalar allowed), optionally region-restricted."""
    f = np.broadcast_to(np.asarray(f, dtype=float), (mesh.n_nodes,))
    if not np.all(np.isfinite(f)):
        raise InvalidField("source has non-finite nodal values")
    return f * lumped_weights(mesh, mask)


class DirichletSystem:
    """Symmetric elimination of prescribed nodes; the reduced block is solved by CG."""

    def __init__(self, A: SparseSym, fixed_idx, free_idx=None):
        n = A.dim
        self.A = A
        self.fixed = np.asarray(fixed_idx, dtype=np.int64)
        if free_idx is None:
            free = np.ones(n, dtype=bool)
            free[self.fixed] = False
            free_idx = np.flatnonzero(free)
        self.free = np.asarray(free_idx, dtype=np.int64)
        self.A_ff = A.principal(self.free)
        self.A_fc = A.submatrix(self.free, self.fixed)

    def solve(self, load, fixed_values, tol=linalg.CG_TOL, x0=None):
        u = np.zeros(self.A.dim)
        u[self.fixed] = fixed_values
        if self.free.size:
            rhs = np.asarray(load)[self.free] - self.A_fc @ u[self.fixed]
            guess = None if x0 is None else np.asarray(x0)[self.free]
            u[self.free], self.report = linalg.cg_solve(self.A_ff, rhs, tol=tol, x0=guess)
        return u


def solve_dirichlet(A: SparseSym, load, fixed: dict, tol=linalg.CG_TOL) -> np.ndarray:
    idx = np.array(sorted(fixed), dtype=np.int64)
    vals = np.array([fixed[i] for i in idx], dtype=float)
    return DirichletSystem(A, idx).solve(load, vals, tol=tol)


def _sigma_key(sigma: CoefficientMap):
    return (sigma.outer, sigma.inclusion, sigma.membrane, tuple(sorted(_FAULTS)))


def transmission_system(mesh: Mesh, sigma: CoefficientMap) -> DirichletSystem:
    key = ("transmission",) + _sigma_key(sigma)
    if key not in mesh._cache:
        fixed = np.union1d(mesh.boundary_nodes, mesh.loop_node_ids())
        mesh._cache[key] = DirichletSystem(assemble_stiffness(mesh, sigma), fixed)
    return mesh._cache[key]


def exterior_system(mesh: Mesh) -> DirichletSystem:
    key = ("exterior", tuple(sorted(_FAULTS)))
    if key not in mesh._cache:
        outer_nodes = mesh.region_nodes(OUTER)
        fixed = np.union1d(mesh.boundary_nodes, mesh.loop_node_ids())
        free = np.setdiff1d(outer_nodes, fixed)
        A = assemble_stiffness(mesh, CoefficientMap(outer=1.0, inclusion=0.0),
                               mask=mesh.region == OUTER)
        mesh._cache[key] = DirichletSystem(A, fixed, free)
    return mesh._cache[key]


def _trace_values(mesh: Mesh, h):
    h = np.broadcast_to(np.asarray(h, dtype=float), (len(mesh.loop_node_ids()),))
    if not np.all(np.isfinite(h)):
        raise InvalidField("trace has non-finite values")
    return h


def _fixed_values(system: DirichletSystem, mesh: Mesh, h):
    full = np.zeros(mesh.n_nodes)
    full[mesh.loop_node_ids()] = _trace_values(mesh, h)
    full[mesh.boundary_nodes] = 0.0
    return full[system.fixed]


def solve_transmission(mesh: Mesh, sigma: CoefficientMap, f, h, tol=linalg.CG_TOL) -> np.ndarray:
    """−div(σ∇u) = f off the interface, u = 0 on ∂Ω, u = h on the loops."""
    system = transmission_system(mesh, sigma)
    return system.solve(assemble_load(mesh, f), _fixed_values(system, mesh, h), tol=tol)


def solve_zero_trace(mesh: Mesh, sigma: CoefficientMap, f, tol=linalg.CG_TOL) -> np.ndarray:
    return solve_transmission(mesh, sigma, f, 0.0, tol=tol)


def solve_exterior_laplace(mesh: Mesh, g, tol=linalg.CG_TOL) -> np.ndarray:
    """Harmonic in the outer region, 0 on ∂Ω, ``g`` on the loops; zero inside inclusions."""
    system = exterior_system(mesh)
    return system.solve(np.zeros(mesh.n_nodes), _fixed_values(system, mesh, g), tol=tol)


def gradient_energy_density(mesh: Mesh, u) -> np.ndarray:
    """|∇u|² · area per triangle."""
    g = hat_gradients(mesh)
    grad = np.einsum("tid,ti->td", g, np.asarray(u)[mesh.triangles])
    return (grad ** 2).sum(axis=1) * mesh.areas()


def field_norms(u, mesh: Mesh, kind=None, component=None):
    """(L² norm, H¹ seminorm) of a P1 field over the selected triangles."""
    u = np.asarray(u, dtype=float)
    mask = mesh.triangle_mask(kind, component)
    vals = u[mesh.triangles[mask]]
    area = mesh.areas()[mask]
    # exact P1 mass: area/12 * (Σ u_i² + (Σ u_i)²)
    l2sq = (area / 12.0 * ((vals ** 2).sum(axis=1) + vals.sum(axis=1) ** 2)).sum()
    h1sq = gradient_energy_density(mesh, u)[mask].sum()
    return float(np.sqrt(l2sq)), float(np.sqrt(h1sq))
