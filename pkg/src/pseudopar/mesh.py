"""Structured triangulations of the unit square with rectangular inclusions.

Thin meshes carry one closed interface loop per inclusion; thick meshes
additionally label a band of triangles around each loop as membrane.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import GeometryError, InvalidMeshSpec, ParseError, SnapError
from .output import write_atomic

OUTER, INCLUSION, MEMBRANE = 0, 1, 2
_KIND_NAMES = {OUTER: "Outer", INCLUSION: "Inclusion", MEMBRANE: "Membrane"}
_SNAP_TOL = 1e-9


class RegionLabel(NamedTuple):
    kind: int
    component: int = 0

    def __str__(self):
        if self.kind == OUTER:
            return "Outer"
        return f"{_KIND_NAMES[self.kind]}({self.component})"

    @classmethod
    def parse(cls, text: str) -> "RegionLabel":
        if text == "Outer":
            return cls(OUTER, 0)
        for kind, name in _KIND_NAMES.items():
            if kind != OUTER and text.startswith(name + "(") and text.endswith(")"):
                comp = int(text[len(name) + 1:-1])
                if comp < 1:
                    raise ValueError(text)
                return cls(kind, comp)
        raise ValueError(text)


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class InterfaceLoop:
    """Closed polyline through mesh nodes; the closing segment is implied."""

    node_ids: np.ndarray
    seg_lengths: np.ndarray
    arc_coords: np.ndarray
    component_id: int

    @classmethod
    def from_nodes(cls, node_ids, points, component_id):
        node_ids = np.asarray(node_ids, dtype=np.int64)
        p = points[node_ids]
        seg = np.linalg.norm(np.roll(p, -1, axis=0) - p, axis=1)
        if len(node_ids) < 3 or np.any(seg <= 0.0):
            raise GeometryError(f"degenerate loop for component {component_id}")
        arc = np.concatenate([[0.0], np.cumsum(seg[:-1])])
        return cls(_readonly(node_ids), _readonly(seg), _readonly(arc), int(component_id))

    @property
    def perimeter(self) -> float:
        return float(self.seg_lengths.sum())

    def __len__(self):
        return len(self.node_ids)


@dataclass(frozen=True, eq=False)
class Mesh:
    nodes: np.ndarray          # (N, 2)
    triangles: np.ndarray      # (T, 3), counterclockwise
    region: np.ndarray         # (T,) OUTER / INCLUSION / MEMBRANE
    component: np.ndarray      # (T,) 0 for Outer, else 1..m
    boundary_nodes: np.ndarray
    loops: tuple = ()
    grid_h: float = 0.0
    eta: float | None = None
    inner_loops: tuple = ()
    outer_loops: tuple = ()
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_components(self) -> int:
        return len(self.loops)

    @property
    def is_thick(self) -> bool:
        return bool(np.any(self.region == MEMBRANE))

    def label(self, t: int) -> RegionLabel:
        return RegionLabel(int(self.region[t]), int(self.component[t]))

    def areas(self) -> np.ndarray:
        if "areas" not in self._cache:
            self._cache["areas"] = _readonly(signed_areas(self.nodes, self.triangles))
        return self._cache["areas"]

    def triangle_mask(self, kind=None, component=None) -> np.ndarray:
        mask = np.ones(len(self.triangles), dtype=bool)
        if kind is not None:
            kinds = (kind,) if np.isscalar(kind) else tuple(kind)
            mask &= np.isin(self.region, kinds)
        if component is not None:
            mask &= self.component == component
        return mask

    def region_nodes(self, kind=None, component=None) -> np.ndarray:
        """Sorted ids of nodes touching a triangle of the given region."""
        tris = self.triangles[self.triangle_mask(kind, component)]
        return np.unique(tris)

    def loop_node_ids(self) -> np.ndarray:
        if not self.loops:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([lp.node_ids for lp in self.loops])

    def interface_normals(self, loop: InterfaceLoop) -> np.ndarray:
        """Unit normal per loop segment, pointing out of the enclosed region."""
        p = self.nodes[loop.node_ids]
        d = np.roll(p, -1, axis=0) - p
        return np.column_stack([d[:, 1], -d[:, 0]]) / loop.seg_lengths[:, None]


def signed_areas(nodes, triangles):
    p0, p1, p2 = (nodes[triangles[:, i]] for i in range(3))
    return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                  - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))


def _square_boundary(nodes):
    x, y = nodes[:, 0], nodes[:, 1]
    tol = 1e-12
    on = (np.abs(x) < tol) | (np.abs(x - 1) < tol) | (np.abs(y) < tol) | (np.abs(y - 1) < tol)
    return np.flatnonzero(on)


def build_square_mesh(n: int) -> Mesh:
    """Uniform right-triangle mesh of the unit square, every cell split along its anti-diagonal."""
    if not isinstance(n, (int, np.integer)) or n < 2:
        raise InvalidMeshSpec(f"grid resolution must be an integer >= 2, got {n!r}")
    n = int(n)
    xs = np.arange(n + 1) / n
    X, Y = np.meshgrid(xs, xs)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(n), np.arange(n))
    p00 = (j * (n + 1) + i).ravel()
    p10, p01 = p00 + 1, p00 + n + 1
    p11 = p01 + 1
    tris = np.empty((2 * n * n, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([p00, p10, p01])
    tris[1::2] = np.column_stack([p10, p11, p01])
    zeros = np.zeros(len(tris), dtype=np.int64)
    return Mesh(_readonly(nodes), _readonly(tris), _readonly(zeros), _readonly(zeros.copy()),
                _readonly(_square_boundary(nodes)), grid_h=1.0 / n)


def _snap(value, h, what):
    k = value / h
    if abs(k - round(k)) > _SNAP_TOL:
        raise SnapError(f"{what}={value!r} is not on a grid line (h={h})")
    return round(k)


def extract_boundary_loop(mesh_nodes, triangles, inside, outside, component_id):
    """Counterclockwise loop of edges between ``inside`` and ``outside`` triangles.

    ``inside``/``outside`` are boolean triangle masks. Edges of inside triangles
    are walked in their own (counterclockwise) orientation.
    """
    out_edges = set()
    for a, b, c in triangles[outside]:
        out_edges.update(((b, a), (c, b), (a, c)))
    succ = {}
    for a, b, c in triangles[inside]:
        for e in ((a, b), (b, c), (c, a)):
            if e in out_edges:
                if e[0] in succ:
                    raise GeometryError(f"interface of component {component_id} is not a simple loop")
                succ[e[0]] = e[1]
    if not succ:
        raise GeometryError(f"no interface edges for component {component_id}")
    # deterministic start: lowest y, then lowest x
    start = min(succ, key=lambda p: (mesh_nodes[p, 1], mesh_nodes[p, 0]))
    order = [start]
    while True:
        nxt = succ.get(order[-1])
        if nxt is None:
            raise GeometryError(f"interface of component {component_id} is not closed")
        if nxt == start:
            break
        order.append(nxt)
        if len(order) > len(succ):
            raise GeometryError(f"interface of component {component_id} is not a simple loop")
    if len(order) != len(succ):
        raise GeometryError(f"interface of component {component_id} has several loops")
    return InterfaceLoop.from_nodes(order, mesh_nodes, component_id)


def embed_inclusions(mesh: Mesh, boxes: Sequence[Sequence[float]]) -> Mesh:
    """Relabel grid-aligned rectangles ``(x0, y0, x1, y1)`` as inclusions 1..m."""
    if mesh.is_thick or mesh.loops:
        raise GeometryError("inclusions can only be embedded in a plain square mesh")
    if len(boxes) == 0:
        raise GeometryError("at least one inclusion is required")
    h = mesh.grid_h
    n = round(1.0 / h)
    cells = []
    for i, box in enumerate(boxes, start=1):
        if len(box) != 4:
            raise GeometryError(f"box {i} must be (x0, y0, x1, y1)")
        x0, y0, x1, y1 = (_snap(v, h, f"box {i} corner") for v in box)
        if x1 <= x0 or y1 <= y0:
            raise GeometryError(f"box {i} is empty")
        if x0 < 1 or y0 < 1 or x1 > n - 1 or y1 > n - 1:
            raise GeometryError(f"box {i} is closer than one cell to the outer boundary")
        cells.append((x0, y0, x1, y1))
    for a in range(len(cells)):
        for b in range(a + 1, len(cells)):
            ax0, ay0, ax1, ay1 = cells[a]
            bx0, by0, bx1, by1 = cells[b]
            separated = ax1 + 1 <= bx0 or bx1 + 1 <= ax0 or ay1 + 1 <= by0 or by1 + 1 <= ay0
            if not separated:
                raise GeometryError(f"boxes {a + 1} and {b + 1} overlap or touch")

    centroids = mesh.nodes[mesh.triangles].mean(axis=1) / h
    region = np.zeros(len(mesh.triangles), dtype=np.int64)
    comp = np.zeros(len(mesh.triangles), dtype=np.int64)
    for i, (x0, y0, x1, y1) in enumerate(cells, start=1):
        inside = ((centroids[:, 0] > x0) & (centroids[:, 0] < x1)
                  & (centroids[:, 1] > y0) & (centroids[:, 1] < y1))
        region[inside] = INCLUSION
        comp[inside] = i
    loops = tuple(
        extract_boundary_loop(mesh.nodes, mesh.triangles, (region == INCLUSION) & (comp == i),
                              region == OUTER, i)
        for i in range(1, len(cells) + 1)
    )
    return Mesh(mesh.nodes, mesh.triangles, _readonly(region), _readonly(comp),
                mesh.boundary_nodes, loops=loops, grid_h=h)


def chebyshev_distance_to_loop(points, mesh: Mesh, loop: InterfaceLoop) -> np.ndarray:
    """Max-norm distance from each point to the (axis-aligned) loop polyline."""
    a = mesh.nodes[loop.node_ids]
    b = np.roll(a, -1, axis=0)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    p = points[:, None, :]
    gap = np.maximum(np.maximum(lo[None] - p, p - hi[None]), 0.0)
    return gap.max(axis=2).min(axis=1)


def thicken_interfaces(mesh: Mesh, k: int) -> Mesh:
    """Turn every thin loop into a membrane band of thickness ``2*k*grid_h``.

    A triangle joins the band of loop i when its centroid lies within max-norm
    distance ``k*grid_h`` of the loop. The thin loops are kept as mid-membrane loops.
    """
    if not mesh.loops or mesh.is_thick:
        raise GeometryError("thicken_interfaces needs a thin mesh with interface loops")
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise GeometryError(f"band half-width must be a positive integer, got {k!r}")
    h = mesh.grid_h
    centroids = mesh.nodes[mesh.triangles].mean(axis=1)
    region = mesh.region.copy()
    comp = mesh.component.copy()
    claimed = np.zeros(len(region), dtype=bool)
    for loop in mesh.loops:
        i = loop.component_id
        band = chebyshev_distance_to_loop(centroids, mesh, loop) < k * h
        foreign = band & (mesh.region == INCLUSION) & (mesh.component != i)
        if np.any(foreign) or np.any(band & claimed):
            raise GeometryError(f"membrane band of component {i} reaches another inclusion")
        claimed |= band
        region[band] = MEMBRANE
        comp[band] = i
        if not np.any((region == INCLUSION) & (comp == i)):
            raise GeometryError(f"membrane band swallows the core of inclusion {i}")
    band_nodes = np.unique(mesh.triangles[region == MEMBRANE])
    if np.intersect1d(band_nodes, mesh.boundary_nodes).size:
        raise GeometryError("membrane band touches the outer boundary")
    for loop in mesh.loops:
        i = loop.component_id
        mine = np.unique(mesh.triangles[(region == MEMBRANE) & (comp == i)])
        others = np.unique(mesh.triangles[(region == MEMBRANE) & (comp != i)])
        if np.intersect1d(mine, others).size:
            raise GeometryError(f"membrane band of component {i} touches another band")
    inner, outer = _band_loops(mesh.nodes, mesh.triangles, region, comp, len(mesh.loops))
    return Mesh(mesh.nodes, mesh.triangles, _readonly(region), _readonly(comp),
                mesh.boundary_nodes, loops=mesh.loops, grid_h=h, eta=2 * k * h,
                inner_loops=inner, outer_loops=outer)


def _band_loops(nodes, tris, region, comp, m):
    inner, outer = [], []
    for i in range(1, m + 1):
        core = (region == INCLUSION) & (comp == i)
        band = (region == MEMBRANE) & (comp == i)
        inner.append(extract_boundary_loop(nodes, tris, core, band, i))
        outer.append(extract_boundary_loop(nodes, tris, core | band, region == OUTER, i))
    return tuple(inner), tuple(outer)


def mesh_equal(a: Mesh, b: Mesh) -> bool:
    if not (np.array_equal(a.nodes, b.nodes) and np.array_equal(a.triangles, b.triangles)
            and np.array_equal(a.region, b.region) and np.array_equal(a.component, b.component)
            and np.array_equal(a.boundary_nodes, b.boundary_nodes)
            and a.grid_h == b.grid_h and a.eta == b.eta):
        return False
    groups = [(a.loops, b.loops), (a.inner_loops, b.inner_loops), (a.outer_loops, b.outer_loops)]
    for la, lb in groups:
        if len(la) != len(lb):
            return False
        for p, q in zip(la, lb):
            if p.component_id != q.component_id or not np.array_equal(p.node_ids, q.node_ids):
                return False
    return True


# ---------------------------------------------------------------- text format

def format_mesh(mesh: Mesh) -> str:
    lines = [f"meta grid_h {float(mesh.grid_h)!r}"]
    if mesh.eta is not None:
        lines.append(f"meta eta {float(mesh.eta)!r}")
    for i, (x, y) in enumerate(mesh.nodes):
        lines.append(f"node {i} {float(x)!r} {float(y)!r}")
    for t, (a, b, c) in enumerate(mesh.triangles):
        lines.append(f"tri {t} {a} {b} {c} {mesh.label(t)}")
    for loop in mesh.loops:
        ids = " ".join(str(p) for p in loop.node_ids)
        lines.append(f"loop {loop.component_id} {ids} {loop.node_ids[0]}")
    return "\n".join(lines) + "\n"


def write_mesh(mesh: Mesh, path) -> None:
    write_atomic(path, format_mesh(mesh))


def read_mesh(path) -> Mesh:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_mesh(fh.read())


def parse_mesh(text: str) -> Mesh:
    meta = {}
    nodes, tris, labels, loops = {}, {}, {}, []
    last_line = 0
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line:
            continue
        last_line = lineno
        parts = line.split()
        kind = parts[0]
        try:
            if kind == "meta":
                if len(parts) != 3 or parts[1] not in ("grid_h", "eta"):
                    raise ParseError("expected 'meta grid_h|eta <value>'", lineno)
                meta[parts[1]] = float(parts[2])
            elif kind == "node":
                if len(parts) != 4:
                    raise ParseError("expected 'node <id> <x> <y>'", lineno)
                idx = int(parts[1])
                if idx in nodes:
                    raise ParseError(f"duplicate node {idx}", lineno)
                nodes[idx] = (float(parts[2]), float(parts[3]))
            elif kind == "tri":
                if len(parts) != 6:
                    raise ParseError("expected 'tri <id> <n0> <n1> <n2> <label>'", lineno)
                idx = int(parts[1])
                if idx in tris:
                    raise ParseError(f"duplicate triangle {idx}", lineno)
                tris[idx] = (int(parts[2]), int(parts[3]), int(parts[4]))
                labels[idx] = (RegionLabel.parse(parts[5]), lineno)
            elif kind == "loop":
                ids = [int(p) for p in parts[2:]]
                if len(ids) < 4 or ids[0] != ids[-1]:
                    raise ParseError("loop must list at least three nodes and repeat the first", lineno)
                loops.append((int(parts[1]), ids[:-1], lineno))
            else:
                raise ParseError(f"unknown record {kind!r}", lineno)
        except ValueError as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(f"malformed record: {exc}", lineno) from None

    if "grid_h" not in meta:
        raise ParseError("missing 'meta grid_h'", 1)
    n_nodes = len(nodes)
    if sorted(nodes) != list(range(n_nodes)):
        raise ParseError("node ids must be 0..N-1 without gaps", last_line)
    if sorted(tris) != list(range(len(tris))) or not tris:
        raise ParseError("triangle ids must be 0..T-1 without gaps", last_line)
    pts = np.array([nodes[i] for i in range(n_nodes)], dtype=float)
    tri_arr = np.array([tris[i] for i in range(len(tris))], dtype=np.int64)
    for t in range(len(tri_arr)):
        if tri_arr[t].min() < 0 or tri_arr[t].max() >= n_nodes:
            raise ParseError(f"triangle {t} references a node outside 0..{n_nodes - 1}", labels[t][1])
    area = signed_areas(pts, tri_arr)
    bad = np.flatnonzero(area <= 0)
    if bad.size:
        raise ParseError(f"triangle {bad[0]} has non-positive area", labels[bad[0]][1])
    if abs(area.sum() - 1.0) > 1e-9:
        raise ParseError(f"triangulation covers area {area.sum():.6g}, expected 1 (truncated file?)",
                         last_line)
    region = np.array([labels[t][0].kind for t in range(len(tri_arr))], dtype=np.int64)
    comp = np.array([labels[t][0].component for t in range(len(tri_arr))], dtype=np.int64)
    m = int(comp.max()) if comp.size else 0
    if sorted(c for c, _, _ in loops) != list(range(1, m + 1)):
        raise ParseError(f"expected one loop for each component 1..{m}", last_line)
    loop_objs = []
    for c, ids, lineno in sorted(loops):
        if min(ids) < 0 or max(ids) >= n_nodes:
            raise ParseError("loop references a missing node", lineno)
        try:
            loop_objs.append(InterfaceLoop.from_nodes(ids, pts, c))
        except GeometryError as exc:
            raise ParseError(str(exc), lineno) from None
    inner = outer = ()
    if np.any(region == MEMBRANE):
        try:
            inner, outer = _band_loops(pts, tri_arr, region, comp, m)
        except GeometryError as exc:
            raise ParseError(f"inconsistent membrane labels: {exc}", last_line) from None
    eta = meta.get("eta")
    return Mesh(_readonly(pts), _readonly(tri_arr), _readonly(region), _readonly(comp),
                _readonly(_square_boundary(pts)), loops=tuple(loop_objs), grid_h=meta["grid_h"],
                eta=eta, inner_loops=inner, outer_loops=outer)


def inclusion_mesh(n: int, boxes, k: int | None = None) -> Mesh:
    """Convenience: square mesh + inclusions (+ membrane bands when ``k`` is given)."""
    mesh = embed_inclusions(build_square_mesh(n), boxes)
    return thicken_interfaces(mesh, k) if k else mesh
