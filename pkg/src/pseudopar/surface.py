"""Tangential calculus on closed interface polylines.

Traces are flat arrays ordered like ``Mesh.loop_node_ids()``; component ``i``
occupies ``slice(offsets[i], offsets[i + 1])``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import linalg
from .errors import GeometryError
from .linalg import SparseSym
from .mesh import Mesh


def periodic_stiffness(seg_lengths) -> SparseSym:
    """1D P1 stiffness of a closed curve parametrized by arc length."""
    seg = np.asarray(seg_lengths, dtype=float)
    n = len(seg)
    j = np.arange(n)
    k = (j + 1) % n
    inv = 1.0 / seg
    rows = np.concatenate([j, k, j, k])
    cols = np.concatenate([j, k, k, j])
    vals = np.concatenate([inv, inv, -inv, -inv])
    return SparseSym(sp.coo_matrix((vals, (rows, cols)), shape=(n, n)), is_spd_expected=False,
                     check=False)


@dataclass(frozen=True, eq=False)
class SurfaceOperator:
    stiffness: tuple       # SparseSym per component
    mass: np.ndarray       # lumped weights, flat
    seg_lengths: np.ndarray  # flat, segment j runs from node j to node j+1 (cyclic per component)
    offsets: np.ndarray
    perimeters: np.ndarray

    @classmethod
    def from_polylines(cls, polylines) -> "SurfaceOperator":
        segs = []
        for pts in polylines:
            p = np.asarray(pts, dtype=float)
            segs.append(np.linalg.norm(np.roll(p, -1, axis=0) - p, axis=1))
        return cls.from_segments(segs)

    @classmethod
    def from_segments(cls, seg_list) -> "SurfaceOperator":
        stiff, mass, offsets = [], [], [0]
        for seg in seg_list:
            seg = np.asarray(seg, dtype=float)
            if len(seg) < 3 or np.any(seg <= 0.0) or not np.all(np.isfinite(seg)):
                raise GeometryError("degenerate interface segment")
            stiff.append(periodic_stiffness(seg))
            mass.append(0.5 * (np.roll(seg, 1) + seg))
            offsets.append(offsets[-1] + len(seg))
        perim = np.array([float(np.sum(s)) for s in seg_list])
        return cls(tuple(stiff), np.concatenate(mass), np.concatenate(seg_list),
                   np.array(offsets), perim)

    @property
    def n_components(self) -> int:
        return len(self.stiffness)

    def component_slice(self, i: int) -> slice:
        """Slice of component ``i`` (0-based)."""
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    def apply(self, w) -> np.ndarray:
        """L w, componentwise."""
        w = np.asarray(w, dtype=float)
        out = np.empty_like(w)
        for i, L in enumerate(self.stiffness):
            s = self.component_slice(i)
            out[s] = L @ w[s]
        return out

    def indicator(self, i: int) -> np.ndarray:
        chi = np.zeros(self.offsets[-1])
        chi[self.component_slice(i)] = 1.0
        return chi

    def component_sums(self, g) -> np.ndarray:
        g = np.asarray(g)
        return np.array([g[self.component_slice(i)].sum() for i in range(self.n_components)])


def build_surface_operator(mesh: Mesh) -> SurfaceOperator:
    if "surface" not in mesh._cache:
        if not mesh.loops:
            raise GeometryError("mesh has no interface loops")
        mesh._cache["surface"] = SurfaceOperator.from_segments([lp.seg_lengths for lp in mesh.loops])
    return mesh._cache["surface"]


def lb_solve(op: SurfaceOperator, alpha: float, g, tol=linalg.CG_TOL,
             compat_tol=linalg.COMPAT_TOL, scale=None) -> np.ndarray:
    """α L v = g with zero weighted mean of v on every component.

    ``g`` holds nodal loads (the source already paired with surface hats);
    ``scale`` optionally gives the per-component reference size for the
    compatibility check.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha!r}")
    g = np.asarray(g, dtype=float)
    v = np.empty_like(g)
    for i, L in enumerate(op.stiffness):
        s = op.component_slice(i)
        ref = None if scale is None else scale[i] / alpha
        x, _ = linalg.cg_solve_zero_mean(L, g[s] / alpha, op.mass[s], tol=tol,
                                         compat_tol=compat_tol, scale=ref)
        v[s] = x
    return v


def surface_gradient(op: SurfaceOperator, w) -> np.ndarray:
    """Per-segment difference quotients (w_{j+1} − w_j) / len_j, flat like ``seg_lengths``."""
    w = np.asarray(w, dtype=float)
    out = np.empty_like(w)
    for i in range(op.n_components):
        s = op.component_slice(i)
        out[s] = (np.roll(w[s], -1) - w[s]) / op.seg_lengths[s]
    return out


def surface_grad_energy(op: SurfaceOperator, w, component: int | None = None) -> float:
    """∫_Γ |∇^B w|² (optionally on one 0-based component)."""
    d = surface_gradient(op, w) ** 2 * op.seg_lengths
    if component is not None:
        d = d[op.component_slice(component)]
    return float(d.sum())


def surface_l2_norm(op: SurfaceOperator, w, component: int | None = None) -> float:
    w = np.asarray(w, dtype=float)
    m = op.mass
    if component is not None:
        s = op.component_slice(component)
        w, m = w[s], m[s]
    return float(np.sqrt(m @ w ** 2))


def surface_h1_norm(op: SurfaceOperator, w) -> float:
    return float(np.sqrt(surface_l2_norm(op, w) ** 2 + surface_grad_energy(op, w)))
