import numpy as np
import pytest
from hypothesis import given, strategies as st

from pseudopar import fem
from pseudopar.checks import QUAD_POINTS, QUAD_WEIGHTS, manufactured_errors
from pseudopar.errors import CoefficientError, InvalidField
from pseudopar.fem import CoefficientMap
from pseudopar.mesh import INCLUSION, MEMBRANE, OUTER, build_square_mesh, inclusion_mesh

ONE = CoefficientMap(outer=1.0, inclusion=1.0)
BOX = [(0.25, 0.25, 0.75, 0.75)]


def _hat_gradient_oracle(points):
    """Gradients of the three hats by solving for each affine function directly."""
    M = np.column_stack([np.ones(3), points])
    grads = []
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1.0
        coef = np.linalg.solve(M, e)        # a + b x + c y
        grads.append(coef[1:])
    return np.array(grads)


def test_unit_right_triangle():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    g = _hat_gradient_oracle(pts)
    oracle = 0.5 * g @ g.T                  # constant integrand times area 1/2
    expected = 0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]])
    assert np.allclose(oracle, expected)
    assert np.allclose(fem.element_stiffness(pts), expected, atol=1e-15)


@given(seed=st.integers(0, 10_000))
def test_element_matches_oracle(seed):
    pts = np.random.default_rng(seed).uniform(-1, 1, (3, 2))
    e1, e2 = pts[1] - pts[0], pts[2] - pts[0]
    area2 = e1[0] * e2[1] - e1[1] * e2[0]
    if abs(area2) < 1e-3:
        return
    g = _hat_gradient_oracle(pts)
    assert np.allclose(fem.element_stiffness(pts), 0.5 * abs(area2) * g @ g.T, atol=1e-10)


@pytest.mark.parametrize("k", [None, 1])
def test_stiffness_properties(k):
    m = inclusion_mesh(8, BOX, k=k)
    coef = CoefficientMap(outer=1.5, inclusion=0.7, membrane=2.0)
    A = fem.assemble_stiffness(m, coef)
    dense = A.toarray()
    assert np.abs(dense.sum(axis=1)).max() < 1e-12
    assert np.abs(dense - dense.T).max() <= 1e-12 * np.abs(dense).max()
    zero = fem.assemble_stiffness(m, CoefficientMap(0.0, 0.0, 0.0))
    assert zero.csr.count_nonzero() == 0


def test_missing_coefficient():
    m = inclusion_mesh(8, BOX, k=1)
    with pytest.raises(CoefficientError):
        fem.assemble_stiffness(m, CoefficientMap(outer=1.0, inclusion=1.0))


def test_membrane_zero_rows():
    m = inclusion_mesh(8, BOX, k=1)
    A = fem.assemble_stiffness(m, CoefficientMap(outer=1.0, inclusion=1.0, membrane=0.0)).toarray()
    memb = m.region_nodes(MEMBRANE)
    cond = m.region_nodes([OUTER, INCLUSION])
    interior = np.setdiff1d(memb, cond)
    assert interior.size > 0 or memb.size > 0
    assert np.all(A[interior] == 0) and np.all(A[:, interior] == 0)


def test_load_examples():
    m = build_square_mesh(4)
    assert fem.assemble_load(m, 1.0).sum() == pytest.approx(1.0, abs=1e-14)
    assert not np.any(fem.assemble_load(m, 0.0))
    m2 = build_square_mesh(2)
    assert fem.assemble_load(m2, m2.nodes[:, 0]).sum() == pytest.approx(0.5, abs=1e-12)
    f = np.ones(m.n_nodes)
    f[3] = np.nan
    with pytest.raises(InvalidField):
        fem.assemble_load(m, f)


def test_dirichlet_examples():
    m = build_square_mesh(6)
    A = fem.assemble_stiffness(m, CoefficientMap(outer=1.0))
    allfixed = {i: float(i) for i in range(m.n_nodes)}
    assert np.array_equal(fem.solve_dirichlet(A, np.zeros(m.n_nodes), allfixed),
                          np.arange(m.n_nodes, dtype=float))
    g = m.nodes.sum(axis=1)
    u = fem.solve_dirichlet(A, np.zeros(m.n_nodes), {int(b): g[b] for b in m.boundary_nodes},
                            tol=1e-13)
    assert np.allclose(u, g, atol=1e-11)


def test_manufactured_rate():
    errs = manufactured_errors((8, 16, 32))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios >= 3.5) & (ratios <= 4.5))


def test_transmission_trivial():
    m = inclusion_mesh(16, BOX)
    assert not np.any(fem.solve_transmission(m, ONE, 0.0, 0.0))
    u = fem.solve_transmission(m, ONE, 0.0, 1.0, tol=1e-13)
    assert u.min() >= -1e-12 and u.max() <= 1 + 1e-12
    inside = m.region_nodes(INCLUSION)
    assert np.allclose(u[inside], 1.0, atol=1e-12)
    h = np.sin(np.arange(len(m.loop_node_ids())))
    u = fem.solve_transmission(m, ONE, 1.0, h)
    assert np.array_equal(u[m.loop_node_ids()], h)


def _probe(m, point):
    return int(np.flatnonzero(np.all(np.isclose(m.nodes, point), axis=1))[0])


def test_transmission_probe_regression():
    # value at (1/8, 1/2) pinned at n=16; a 4x refined run of the same solver gives 0.488771
    u16 = fem.solve_transmission(inclusion_mesh(16, BOX), ONE, 0.0, 1.0, tol=1e-13)
    m64 = inclusion_mesh(64, BOX)
    u64 = fem.solve_transmission(m64, ONE, 0.0, 1.0, tol=1e-13)
    v16 = u16[_probe(inclusion_mesh(16, BOX), (0.125, 0.5))]
    v64 = u64[_probe(m64, (0.125, 0.5))]
    assert v16 == pytest.approx(0.48916000919645763, abs=1e-9)
    assert abs(v16 - v64) < 1e-3


def test_zero_trace_examples():
    m = inclusion_mesh(16, BOX)
    assert not np.any(fem.solve_zero_trace(m, ONE, 0.0))
    f = np.maximum(0.0, np.sin(3 * np.pi * m.nodes[:, 0]))
    assert fem.solve_zero_trace(m, ONE, f, tol=1e-13).min() >= -1e-13


def test_zero_trace_integral_regression():
    # ∫ū for f ≡ 1 pinned at n=16; refined runs (n=32, 64) converge towards ≈0.00638
    vals = []
    for n in (16, 32, 64):
        m = inclusion_mesh(n, BOX)
        vals.append(float(fem.lumped_weights(m) @ fem.solve_zero_trace(m, ONE, 1.0, tol=1e-13)))
    assert vals[0] == pytest.approx(0.005911596847536903, abs=1e-10)
    d1, d2 = vals[1] - vals[0], vals[2] - vals[1]
    assert d1 > 0 and d2 > 0 and d1 / d2 > 2.5
    assert abs(vals[0] - vals[2]) < 0.1 * vals[2]


def test_exterior_examples():
    m = inclusion_mesh(16, [(0.125, 0.25, 0.375, 0.75), (0.625, 0.25, 0.875, 0.75)])
    n_tr = len(m.loop_node_ids())
    assert not np.any(fem.solve_exterior_laplace(m, np.zeros(n_tr)))
    g1 = np.zeros(n_tr)
    g1[: len(m.loops[0].node_ids)] = 1.0
    u = fem.solve_exterior_laplace(m, g1, tol=1e-13)
    outer = m.region_nodes(OUTER)
    assert u[outer].min() >= -1e-12 and u[outer].max() <= 1 + 1e-12
    assert not np.any(u[np.setdiff1d(np.arange(m.n_nodes), outer)])
    r = np.random.default_rng(1)
    a, b = r.standard_normal(n_tr), r.standard_normal(n_tr)
    s = fem.solve_exterior_laplace(m, a + b, tol=1e-13)
    assert np.abs(s - fem.solve_exterior_laplace(m, a, tol=1e-13)
                  - fem.solve_exterior_laplace(m, b, tol=1e-13)).max() < 1e-10


def test_field_norms():
    m = build_square_mesh(8)
    x, y = m.nodes[:, 0], m.nodes[:, 1]
    assert fem.field_norms(np.full(m.n_nodes, 3.0), m)[1] == 0.0
    assert fem.field_norms(3.0 * np.ones(m.n_nodes), m)[0] == pytest.approx(3.0)
    assert fem.field_norms(x, m)[1] ** 2 == pytest.approx(1.0, abs=1e-12)
    assert fem.field_norms(x + 2 * y, m)[1] ** 2 == pytest.approx(5.0, abs=1e-12)
    assert fem.field_norms(x, m)[0] ** 2 == pytest.approx(1 / 3, abs=1e-12)


def test_energy_error_monotone():
    def energy_error(n):
        m = build_square_mesh(n)
        x, y = m.nodes[:, 0], m.nodes[:, 1]
        A = fem.assemble_stiffness(m, CoefficientMap(outer=1.0))
        f = 2 * (x * (1 - x) + y * (1 - y))
        uh = fem.solve_dirichlet(A, fem.assemble_load(m, f), {int(b): 0.0 for b in m.boundary_nodes},
                                 tol=1e-12)
        grad_h = np.einsum("tid,ti->td", fem.hat_gradients(m), uh[m.triangles])
        pts = np.einsum("qi,tid->tqd", QUAD_POINTS, m.nodes[m.triangles])
        px, py = pts[..., 0], pts[..., 1]
        gx = (1 - 2 * px) * py * (1 - py) - grad_h[:, None, 0]
        gy = px * (1 - px) * (1 - 2 * py) - grad_h[:, None, 1]
        return float(np.sqrt(((gx ** 2 + gy ** 2) @ QUAD_WEIGHTS) @ m.areas()))
    errs = [energy_error(n) for n in (4, 8, 16, 32)]
    assert all(b < a for a, b in zip(errs, errs[1:]))
