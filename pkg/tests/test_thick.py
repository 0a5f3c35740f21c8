import warnings

import numpy as np
import pytest

from pseudopar import fem
from pseudopar.checks import ONE_BOX, ref_initial, ref_static_source, thick_solver
from pseudopar.errors import ConfigError, GeometryError, StiffnessWarning
from pseudopar.mesh import INCLUSION, MEMBRANE, OUTER, inclusion_mesh
from pseudopar.thick import (ThickConfig, ThickSolver, concentration_run, delta_study,
                             extend_initial)
from pseudopar.thin import ThinConfig, ThinSolver


def test_config_preconditions():
    with pytest.raises(ConfigError):
        ThickConfig(dt=0.1, T=1.0, delta=0.0, scheme="explicit")
    with pytest.raises(ConfigError):
        ThickConfig(dt=0.1, T=1.0, delta=0.0, scheme="picard")
    with pytest.raises(ConfigError):
        ThickConfig(dt=0.1, T=1.0, delta=-1.0)
    ThickConfig(dt=0.1, T=1.0, delta=0.0)     # the limit problem itself is fine


def test_thin_mesh_rejected():
    with pytest.raises(GeometryError):
        ThickSolver(inclusion_mesh(8, ONE_BOX), ThickConfig(dt=0.1, T=0.1), lambda t: 0.0, 0.0)


def test_extension_examples():
    m = inclusion_mesh(16, ONE_BOX, k=1)
    ext, ratio = extend_initial(m, np.zeros(m.n_nodes))
    assert not np.any(ext) and ratio == 0.0
    ext, _ = extend_initial(m, np.ones(m.n_nodes), tol=1e-13)
    core = m.region_nodes(INCLUSION)
    assert np.allclose(ext[core], 1.0, atol=1e-12)
    assert ext.min() >= -1e-12 and ext.max() <= 1 + 1e-12
    assert not np.any(ext[m.boundary_nodes])
    memb = m.region_nodes(MEMBRANE)
    assert np.all(ext[memb] == 1.0)


def test_extension_ratio_stable():
    ratios = []
    for n, k in ((16, 1), (32, 2)):       # same band geometry
        m = inclusion_mesh(n, ONE_BOX, k=k)
        ratios.append(extend_initial(m, ref_initial(m.nodes))[1])
    assert abs(ratios[1] / ratios[0] - 1) < 0.2


@pytest.mark.parametrize("scheme,delta", [("implicit", 0.0), ("implicit", 0.1),
                                          ("explicit", 0.1), ("picard", 0.1)])
def test_zero_data(scheme, delta):
    m = inclusion_mesh(8, ONE_BOX, k=1)
    s = ThickSolver(m, ThickConfig(dt=0.05, T=0.2, delta=delta, scheme=scheme), lambda t: 0.0, 0.0)
    st = s.run()
    assert all(not np.any(u) for u in st.u)
    if scheme == "picard":
        assert all(w.sweeps == 1 for w in st.windows)


def _dense_matrix(mesh, coef):
    """Element-by-element dense assembly, independent of the vectorized assembler."""
    per_t = coef.per_triangle(mesh)
    A = np.zeros((mesh.n_nodes, mesh.n_nodes))
    for t, tri in enumerate(mesh.triangles):
        A[np.ix_(tri, tri)] += per_t[t] * fem.element_stiffness(mesh.nodes[tri])
    return A


@pytest.mark.parametrize("delta", [0.0, 0.1])
def test_implicit_step_dense_oracle(delta):
    m = inclusion_mesh(8, ONE_BOX, k=1)
    X = m.nodes
    s = ThickSolver(m, ThickConfig(dt=0.05, T=0.05, delta=delta), lambda t: 0.0, ref_initial(X))
    st = s.run()
    AB, AK = _dense_matrix(m, s.B), _dense_matrix(m, s.K)
    free = np.setdiff1d(np.arange(m.n_nodes), m.boundary_nodes)
    M = (AB + 0.05 * AK)[np.ix_(free, free)]
    rhs = (AB @ st.u[0])[free]
    expected = np.zeros(m.n_nodes)
    expected[free] = np.linalg.solve(M, rhs)
    assert np.allclose(st.u[1], expected, atol=1e-10)
    e0 = 0.5 * st.u[0] @ AB @ st.u[0]
    e1 = 0.5 * st.u[1] @ AB @ st.u[1]
    assert e1 <= e0
    assert s.b_energy(st.u[0]) == pytest.approx(e0, rel=1e-12)


def test_dissipativity_every_step():
    s = thick_solver(16, ONE_BOX, 1, 0.05, 1.0, source=lambda X, t: 0.0 * X[:, 0], delta=0.01)
    e = [s.b_energy(u) for u in s.run().u]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(e, e[1:]))


def test_stiffness_warning():
    m = inclusion_mesh(8, ONE_BOX, k=1)
    with pytest.warns(StiffnessWarning):
        ThickSolver(m, ThickConfig(dt=0.1, T=0.1, delta=0.01, scheme="explicit"), lambda t: 0.0, 0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error", StiffnessWarning)
        ThickSolver(m, ThickConfig(dt=0.01, T=0.1, delta=0.1, scheme="explicit"), lambda t: 0.0, 0.0)


def test_explicit_vs_implicit_gap_halves():
    gaps = []
    for dt in (0.02, 0.01, 0.005):
        a = thick_solver(8, ONE_BOX, 1, dt, 0.2, delta=0.1)
        b = thick_solver(8, ONE_BOX, 1, dt, 0.2, delta=0.1, scheme="explicit")
        gaps.append(fem.field_norms(a.run().u[-1] - b.run().u[-1], a.mesh)[1])
    r = np.array(gaps[:-1]) / np.array(gaps[1:])
    assert np.all((r >= 1.5) & (r <= 3))


def test_picard_vs_implicit_gap_halves():
    gaps = []
    for dt in (0.02, 0.01, 0.005):
        a = thick_solver(8, ONE_BOX, 1, dt, 0.2, delta=0.1)
        b = thick_solver(8, ONE_BOX, 1, dt, 0.2, delta=0.1, scheme="picard", window=0.04)
        gaps.append(fem.field_norms(a.run().u[-1] - b.run().u[-1], a.mesh)[1])
    r = np.array(gaps[:-1]) / np.array(gaps[1:])
    assert np.all((r >= 1.5) & (r <= 3))


def test_picard_window_shrinks_with_delta():
    windows = {}
    for delta in (0.1, 0.01):
        s = thick_solver(8, ONE_BOX, 1, 0.01, 0.2, delta=delta, scheme="picard", window=0.2)
        st = s.run()
        windows[delta] = min(w.window for w in st.windows)
    assert windows[0.01] < windows[0.1]


def test_flux_condition():
    s = thick_solver(16, ONE_BOX, 1, 0.1, 3.0, source=ref_static_source, delta=0.1)
    st = s.run()
    res0, scale0 = s.flux_condition_check(st, 0)[0]
    assert res0 > 1e-3 * scale0                         # generic data violate it at t = 0
    resN, scaleN = s.flux_condition_check(st, s.n_steps)[0]
    assert resN <= 1e-6 * scaleN
    # unforced: the transient decays
    z = thick_solver(16, ONE_BOX, 1, 0.1, 3.0, source=lambda X, t: 0.0 * X[:, 0], delta=0.1)
    zs = z.run()
    r = [z.flux_condition_check(zs, k)[0][0] for k in (1, 10, 30)]
    assert r[0] > r[1] > r[2]


def test_flux_condition_exact_for_limit_problem():
    s = thick_solver(16, ONE_BOX, 1, 0.05, 0.5, source=ref_static_source, delta=0.0)
    st = s.run()
    for k in range(1, s.n_steps + 1):
        res, scale = s.flux_condition_check(st, k)[0]
        assert res <= 1e-9 * scale


def test_delta_study_zero_data():
    m = inclusion_mesh(8, ONE_BOX, k=1)
    rows = delta_study(m, ThickConfig(dt=0.05, T=0.2), lambda t: 0.0, 0.0, [0.1, 0.01])
    assert all(r.distance == 0.0 for r in rows)
    with pytest.raises(ConfigError):
        delta_study(m, ThickConfig(dt=0.05, T=0.2), lambda t: 0.0, 0.0, [0.01, 0.1])


def test_delta_study_monotone_and_uniform_energy():
    m = inclusion_mesh(8, ONE_BOX, k=1)
    X = m.nodes
    rows = delta_study(m, ThickConfig(dt=0.05, T=0.5), lambda t: ref_static_source(X),
                       ref_initial(X), [0.1, 0.01, 0.001])
    d = [r.distance for r in rows]
    assert d[0] > d[1] > d[2] > 0
    ratio = [r.energy_lhs / r.energy_rhs for r in rows]
    assert max(ratio) / min(ratio) - 1 < 0.1


def _concentration(alpha, n=16, ks=(2, 1)):
    base = inclusion_mesh(n, ONE_BOX)
    X = base.nodes
    th = ThinSolver(base, ThinConfig(dt=0.02, T=0.2, alpha=alpha),
                    lambda t: ref_static_source(X), ref_initial(X)[base.loop_node_ids()])
    hist = th.run()
    return concentration_run(base, ks, ThickConfig(dt=0.02, T=0.2, alpha=alpha),
                             lambda P, t: ref_static_source(P), ref_initial, hist.h, [5, 10])


def test_concentration_zero_data():
    base = inclusion_mesh(16, ONE_BOX)
    zero = np.zeros(len(base.loop_node_ids()))
    rows = concentration_run(base, (2, 1), ThickConfig(dt=0.05, T=0.1), lambda P, t: 0 * P[:, 0],
                             lambda P: 0 * P[:, 0], [zero] * 3, [1, 2])
    assert all(r.discrepancy == 0.0 for r in rows)


def test_concentration_monotone_and_alpha_consistency():
    a = _concentration(1.0)
    b = _concentration(2.0)
    for t in {r.t for r in a}:
        d = [r.discrepancy for r in a if r.t == t]
        assert d[0] > d[1]
    ratios = np.array([y.discrepancy / x.discrepancy for x, y in zip(a, b)])
    assert ratios.std() / ratios.mean() < 0.2


def test_superposition(rng):
    m = inclusion_mesh(8, ONE_BOX, k=1)
    X = m.nodes
    u1, u2 = rng.standard_normal(m.n_nodes), rng.standard_normal(m.n_nodes)
    f1 = lambda t: np.sin(X[:, 0] + t)
    f2 = lambda t: X[:, 1] * t
    cfg = ThickConfig(dt=0.05, T=0.2, delta=0.01)
    a = ThickSolver(m, cfg, f1, u1).run().u
    b = ThickSolver(m, cfg, f2, u2).run().u
    c = ThickSolver(m, cfg, lambda t: f1(t) + f2(t), u1 + u2).run().u
    assert max(np.abs(x + y - z).max() for x, y, z in zip(a, b, c)) < 1e-9


def test_boundary_values_zero():
    s = thick_solver(8, ONE_BOX, 1, 0.05, 0.2, delta=0.1, scheme="explicit")
    for u in s.run().u:
        assert not np.any(u[s.mesh.boundary_nodes])
    assert np.any(s.mesh.region == OUTER)
