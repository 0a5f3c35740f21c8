"""Numerical acceptance checks shared by ``pseudopar verify`` and the test suite.

Every check returns a ``CheckResult``; none of them raises on a numerical
failure (solver errors are caught and reported as a failed check).
"""
from __future__ import annotations

import math
import os
import tempfile
import time
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import coupling, fem, linalg
from .errors import PseudoparError
from .fem import CoefficientMap
from .mesh import OUTER, build_square_mesh, inclusion_mesh
from .surface import (SurfaceOperator, build_surface_operator, lb_solve, surface_gradient,
                      surface_h1_norm)
from .thick import ThickConfig, ThickSolver, concentration_run, delta_study
from .thin import ThinConfig, ThinSolver

ONE_BOX = [(0.25, 0.25, 0.75, 0.75)]
TWO_BOXES = [(0.125, 0.25, 0.375, 0.75), (0.625, 0.25, 0.875, 0.75)]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(name, fn):
    t0 = time.perf_counter()
    try:
        passed, detail = fn()
    except (PseudoparError, ArithmeticError, ValueError) as exc:
        passed, detail = False, f"{type(exc).__name__}: {exc}"
    return CheckResult(name, bool(passed), detail, time.perf_counter() - t0)


# ---------------------------------------------------------------- reference data
def ref_source(nodes, t):
    x, y = nodes[:, 0], nodes[:, 1]
    return np.sin(np.pi * x) * np.sin(np.pi * y) * (1.0 + t)


def ref_static_source(nodes, t=0.0):
    x, y = nodes[:, 0], nodes[:, 1]
    return np.sin(np.pi * x) * np.sin(np.pi * y)


def ref_initial(nodes):
    return np.cos(2 * np.pi * nodes[:, 0]) + nodes[:, 1]


def thin_solver(n, boxes, dt, T, scheme="marching", window=None, source=ref_source, **kw):
    mesh = inclusion_mesh(n, boxes)
    ids = mesh.loop_node_ids()
    X = mesh.nodes
    cfg = ThinConfig(dt=dt, T=T, scheme=scheme, window=window, **kw)
    return ThinSolver(mesh, cfg, lambda t: source(X, t), ref_initial(X)[ids])


def thick_solver(n, boxes, k, dt, T, source=ref_source, **kw):
    mesh = inclusion_mesh(n, boxes, k=k)
    X = mesh.nodes
    return ThickSolver(mesh, ThickConfig(dt=dt, T=T, **kw), lambda t: source(X, t), ref_initial(X))


# ---------------------------------------------------------------- 1. elliptic
# 7-point degree-5 rule on the reference triangle (barycentric points, weights summing to 1)
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
QUAD_POINTS = np.array([[1 / 3, 1 / 3, 1 / 3],
                        [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
                        [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2]])
QUAD_WEIGHTS = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)


def l2_error(mesh, uh, exact) -> float:
    """‖u_h − exact‖_{L²} with a degree-5 rule per triangle."""
    p = mesh.nodes[mesh.triangles]                    # (T, 3, 2)
    pts = np.einsum("qi,tid->tqd", QUAD_POINTS, p)    # (T, Q, 2)
    uh_q = np.einsum("qi,ti->tq", QUAD_POINTS, np.asarray(uh)[mesh.triangles])
    err = (uh_q - exact(pts[..., 0], pts[..., 1])) ** 2
    return float(np.sqrt((err @ QUAD_WEIGHTS) @ mesh.areas()))


def manufactured_errors(ns=(8, 16, 32)):
    def exact(x, y):
        return x * (1 - x) * y * (1 - y)

    errors = []
    for n in ns:
        mesh = build_square_mesh(n)
        x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
        f = 2 * (x * (1 - x) + y * (1 - y))
        A = fem.assemble_stiffness(mesh, CoefficientMap(outer=1.0))
        uh = fem.solve_dirichlet(A, fem.assemble_load(mesh, f),
                                 {int(b): 0.0 for b in mesh.boundary_nodes}, tol=1e-12)
        errors.append(l2_error(mesh, uh, exact))
    return errors


def check_elliptic(quick=False):
    def run():
        errs = manufactured_errors()
        ratios = [a / b for a, b in zip(errs, errs[1:])]
        return all(3.5 <= r <= 4.5 for r in ratios), f"L2 error ratios {_fmt(ratios)}"
    return _timed("1 elliptic convergence", run)


# ---------------------------------------------------------------- 2. surface
def polygon_operator(n_sides=256):
    theta = 2 * np.pi * np.arange(n_sides) / n_sides
    pts = np.column_stack([np.cos(theta), np.sin(theta)])
    return SurfaceOperator.from_polylines([pts]), theta


def check_surface(quick=False):
    def run():
        op, theta = polygon_operator(256)
        target = np.cos(theta)
        v = lb_solve(op, 1.0, target * op.mass)
        M = op.mass
        rel = math.sqrt(M @ (v - target) ** 2 / (M @ target ** 2))
        L = op.stiffness[0]
        rq = []
        for k in range(1, 5):
            w = np.cos(k * theta)
            rq.append(float(w @ (L @ w)) / float(M @ w ** 2) / k ** 2)
        ok = rel < 0.01 and all(abs(r - 1) < 0.015 for r in rq)
        return ok, f"cos-mode L2 error {rel:.2e}, Rayleigh/k^2 {_fmt(rq)}"
    return _timed("2 surface operator", run)


# ---------------------------------------------------------------- 3. constants
def constants_structure(mesh, sigma_out=1.0, rng=None):
    cs = coupling.build_constants_system(mesh, sigma_out)
    A = cs.A
    off = A[~np.eye(len(A), dtype=bool)]
    rng = np.random.default_rng(0) if rng is None else rng
    op = build_surface_operator(mesh)
    w = rng.standard_normal(op.offsets[-1])
    ell = rng.standard_normal(mesh.n_components)
    tol = 1e-12
    p1, _ = coupling.project_to_Hl(cs, mesh, w, ell, tol=tol)
    p2, _ = coupling.project_to_Hl(cs, mesh, p1, ell, tol=tol)
    shifted = w.copy()
    for i in range(op.n_components):
        shifted[op.component_slice(i)] += rng.standard_normal()
    p3, _ = coupling.project_to_Hl(cs, mesh, shifted, ell, tol=tol)
    return {
        "diag": np.diag(A), "offdiag_min": float(off.min()) if off.size else 0.0,
        "colsums": A.sum(axis=0),
        "idempotent": float(np.abs(p2 - p1).max()),
        "shift": float(np.abs(p3 - p1).max()),
    }


def check_constants(quick=False):
    def run():
        details, ok = [], True
        for n in ((16,) if quick else (16, 32)):
            for boxes in (ONE_BOX, TWO_BOXES):
                s = constants_structure(inclusion_mesh(n, boxes))
                good = (np.all(s["diag"] < 0) and s["offdiag_min"] >= -1e-10
                        and np.all(s["colsums"] < 0) and s["idempotent"] <= 1e-10
                        and s["shift"] <= 1e-10)
                ok &= bool(good)
                details.append(f"n={n} m={len(boxes)} maxdiag={s['diag'].max():.3g} "
                               f"maxcol={s['colsums'].max():.3g} idem={s['idempotent']:.1e} "
                               f"shift={s['shift']:.1e}")
        return ok, "; ".join(details)
    return _timed("3 constants structure", run)


# ---------------------------------------------------------------- 4. compatibility
def check_compatibility(quick=False):
    def run():
        worst = 0.0
        runs = [(8 if quick else 16, ONE_BOX, "marching"), (8 if quick else 16, TWO_BOXES, "marching")]
        if not quick:
            runs.append((16, ONE_BOX, "picard"))
        for n, boxes, scheme in runs:
            s = thin_solver(n, boxes, 0.05, 0.5, scheme=scheme, window=0.1)
            worst = max(worst, s.max_compatibility_residual(s.run()))
        return worst <= 1e-8, f"max relative jump-flux total {worst:.2e}"
    return _timed("4 compatibility", run)


# ---------------------------------------------------------------- 5. contraction
def log_fit(increments):
    """(R², geometric ratio) of a linear fit to log increments."""
    y = np.log(np.asarray(increments, dtype=float))
    fit = stats.linregress(np.arange(len(y)), y)
    return fit.rvalue ** 2, math.exp(fit.slope)


def picard_reports(quick=False):
    n = 8 if quick else 16
    reports = []
    for boxes in (ONE_BOX, TWO_BOXES):
        s = thin_solver(n, boxes, 0.05, 0.5, scheme="picard", window=0.1)
        reports.append(("thin", s.run().windows))
    # window δ/(2σ): the Lipschitz bound of h -> v is about σ/δ, and half its inverse is
    # the classical contraction window
    t = thick_solver(n, ONE_BOX, 1, 0.01, 0.2, scheme="picard", window=0.05, delta=0.1)
    reports.append(("thick", t.run().windows))
    return reports


def check_contraction(quick=False):
    def run():
        worst_r2, worst_ratio, halvings = 1.0, 0.0, 0
        for _, windows in picard_reports(quick):
            for w in windows:
                halvings = max(halvings, w.halvings)
                if len(w.increments) >= 3:
                    r2, rate = log_fit(w.increments)
                    worst_r2 = min(worst_r2, r2)
                    worst_ratio = max(worst_ratio, rate, max(w.ratios))
        ok = worst_r2 > 0.99 and worst_ratio < 1 and halvings <= 2
        return ok, f"min R2 {worst_r2:.5f}, max ratio {worst_ratio:.3f}, max halvings {halvings}"
    return _timed("5 Picard contraction", run)


# ---------------------------------------------------------------- 6. scheme consistency
def thin_scheme_gaps(n=16, dts=(0.1, 0.05, 0.025), T=0.5):
    gaps = []
    for dt in dts:
        a = thin_solver(n, ONE_BOX, dt, T)
        b = thin_solver(n, ONE_BOX, dt, T, scheme="picard", window=0.1)
        gaps.append(surface_h1_norm(a.op, a.run().h[-1] - b.run().h[-1]))
    return gaps


def thick_scheme_gaps(n=16, dts=(0.02, 0.01, 0.005), T=0.2, delta=0.1):
    gaps = []
    for dt in dts:
        a = thick_solver(n, ONE_BOX, 1, dt, T, delta=delta)
        b = thick_solver(n, ONE_BOX, 1, dt, T, delta=delta, scheme="explicit")
        d = a.run().u[-1] - b.run().u[-1]
        gaps.append(math.hypot(*fem.field_norms(d, a.mesh)))
    return gaps


def check_schemes(quick=False):
    def run():
        n = 8 if quick else 16
        thin = thin_scheme_gaps(n)
        thick = thick_scheme_gaps(n)
        rt = [a / b for a, b in zip(thin, thin[1:])]
        rk = [a / b for a, b in zip(thick, thick[1:])]
        ok = all(1.5 <= r <= 3 for r in rt + rk)
        return ok, f"thin gap ratios {_fmt(rt)}, thick gap ratios {_fmt(rk)}"
    return _timed("6 scheme consistency", run)


# ---------------------------------------------------------------- 7. energy
def thin_energy_ratios(ns=(16, 32)):
    out = []
    for n in ns:
        s = thin_solver(n, ONE_BOX, 0.05, 0.5)
        out.append(s.energy_audit(s.run())[2])
    return out


def thick_delta_rows(n=16, deltas=(1e-1, 1e-2, 1e-3)):
    mesh = inclusion_mesh(n, ONE_BOX, k=1)
    X = mesh.nodes
    return delta_study(mesh, ThickConfig(dt=0.05, T=1.0), lambda t: ref_source(X, t),
                       ref_initial(X), deltas)


def check_energy(quick=False):
    def run():
        thin = thin_energy_ratios((8, 16) if quick else (16, 32))
        rows = thick_delta_rows(8 if quick else 16)
        thick = [r.energy_lhs / r.energy_rhs for r in rows]
        v_thin = abs(thin[1] / thin[0] - 1)
        v_thick = max(thick) / min(thick) - 1
        ok = v_thin < 0.2 and v_thick < 0.1
        return ok, (f"thin ratios {_fmt(thin)} (variation {v_thin:.3f}), "
                    f"thick ratios {_fmt(thick)} (variation {v_thick:.3f})")
    return _timed("7 energy inequalities", run)


# ---------------------------------------------------------------- 8. delta limit
def check_delta_limit(quick=False):
    def run():
        rows = thick_delta_rows(8 if quick else 16)
        d = [r.distance for r in rows]
        return all(b < a for a, b in zip(d, d[1:])), f"distances {_fmt(d)}"
    return _timed("8 delta limit", run)


# ---------------------------------------------------------------- 9. concentration
def concentration_rows(n=32, ks=(4, 2, 1), dt=0.01, T=0.2):
    s = thin_solver(n, ONE_BOX, dt, T)
    hist = s.run()
    steps = s.n_steps
    samples = [steps // 4, steps // 2, steps]
    return concentration_run(s.mesh, ks, ThickConfig(dt=dt, T=T), ref_source, ref_initial,
                             hist.h, samples)


def check_concentration(quick=False):
    def run():
        rows = concentration_rows(16 if quick else 32, (2, 1) if quick else (4, 2, 1))
        ok = True
        by_t = {}
        for r in rows:
            by_t.setdefault(r.t, []).append((r.eta, r.discrepancy))
        for vals in by_t.values():
            vals.sort(reverse=True)                          # decreasing eta
            d = [v for _, v in vals]
            ok &= all(b < a for a, b in zip(d, d[1:]))
        final = sorted(by_t)[-1]
        return ok, f"discrepancy at t={final:g} by decreasing eta {_fmt([v for _, v in by_t[final]])}"
    return _timed("9 concentration", run)


# ---------------------------------------------------------------- 10. rearrangement
def check_rearrangement(quick=False):
    def run():
        s = thin_solver(8 if quick else 16, TWO_BOXES, 0.05, 0.05)
        st = s.initial_state()
        g0 = surface_gradient(s.op, s.u0)
        gap = float(np.abs(surface_gradient(s.op, st.h[0]) - g0).max())
        rows = s.rearrangement_report(st)
        mism = max(abs(a - b) / max(b, 1e-300) for _, a, b in rows)
        cmax = max(abs(c) for c, _, _ in rows)
        tol = 1e-12 * (1 + float(np.abs(g0).max()))
        ok = gap <= tol and mism <= 1e-10 and cmax > 1e-8
        return ok, f"gradient gap {gap:.1e}, norm identity mismatch {mism:.1e}, max |c| {cmax:.3g}"
    return _timed("10 initial-data rearrangement", run)


# ---------------------------------------------------------------- 11. determinism
DETERMINISM_CONFIGS = {
    "run-thin": {"n": 8, "T": 0.2, "dt": 0.05, "f_expr": "sin(pi*x)*sin(pi*y)*(1+t)",
                 "u0_expr": "cos(2*pi*x)+y", "dump_times": [0.1]},
    "run-thick": {"n": 8, "k": 1, "T": 0.2, "dt": 0.05, "delta": 0.1,
                  "f_expr": "sin(pi*x)*sin(pi*y)", "u0_expr": "cos(2*pi*x)+y"},
}


def _run_cli_twice(command, config, threads):
    import json

    from .cli import main
    outputs = []
    with tempfile.TemporaryDirectory() as tmp:
        cfg_path = os.path.join(tmp, "config.json")
        with open(cfg_path, "w", encoding="utf-8") as fh:
            json.dump(config, fh)
        for rep in range(2):
            out = os.path.join(tmp, f"out{rep}")
            code = main([command, "--config", cfg_path, "--out", out, "--threads", str(threads),
                         "--quiet"])
            if code != 0:
                raise PseudoparError(f"{command} exited with {code}")
            files = {}
            for name in sorted(os.listdir(out)):
                if name.endswith(".csv"):
                    with open(os.path.join(out, name), "rb") as fh:
                        files[name] = fh.read()
            outputs.append(files)
    return outputs


def check_determinism(quick=False):
    def run():
        details, ok = [], True
        for command, config in DETERMINISM_CONFIGS.items():
            for threads in ((1,) if quick else (1, 2)):
                a, b = _run_cli_twice(command, config, threads)
                same = bool(a) and a == b
                ok &= same
                details.append(f"{command} threads={threads}: {len(a)} csv {'identical' if same else 'DIFFER'}")
        return ok, "; ".join(details)
    return _timed("11 determinism", run)


# ---------------------------------------------------------------- invariants
def check_conservation(quick=False):
    """Discrete divergence identity linking boundary, interface and source integrals."""
    def run():
        mesh = inclusion_mesh(8 if quick else 16, TWO_BOXES)
        X = mesh.nodes
        f = ref_static_source(X)
        sigma = CoefficientMap(outer=1.0, inclusion=2.0)
        ubar = fem.solve_zero_trace(mesh, sigma, f, tol=1e-12)
        bf = coupling.boundary_flux(mesh, 1.0, f, ubar, tol=1e-12)
        os_ = sum(coupling.onesided_outer_flux(mesh, 1.0, f, ubar, i, tol=1e-12)
                  for i in range(1, mesh.n_components + 1))
        src = coupling.region_integral(mesh, f, mesh.region == OUTER)
        res = abs(bf - os_ + src)
        scale = abs(bf) + abs(os_) + abs(src)
        return res <= 1e-8 * scale, f"identity residual {res:.2e} (scale {scale:.3g})"
    return _timed("conservation identity", run)


def check_dissipativity(quick=False):
    """Implicit thick steps without source never increase ½∫B|∇u|² (δ = 0.1 and δ = 0)."""
    def run():
        details, ok = [], True
        for delta in (0.1, 0.0):
            s = thick_solver(8 if quick else 16, ONE_BOX, 1, 0.05, 0.5,
                             source=lambda X, t: 0.0 * X[:, 0], delta=delta)
            e = [s.b_energy(u) for u in s.run().u]
            worst = max(b - a for a, b in zip(e, e[1:]))
            ok &= worst <= 1e-12 * e[0]
            details.append(f"delta={delta:g}: max energy increase {worst:.2e} (E0 {e[0]:.3g})")
        return ok, "; ".join(details)
    return _timed("implicit dissipativity", run)


def check_expressions(quick=False):
    def run():
        from .expr import parse_expr
        e = parse_expr("sin(3.14159265*x)*t")
        v = e(0.5, 0.0, 2.0)
        try:
            parse_expr("x +* y")
            offset = None
        except PseudoparError as exc:
            offset = getattr(exc, "offset", None)
        return abs(v - 2.0) <= 1e-6 and offset == 3, f"sample {v:.9f}, syntax offset {offset}"
    return _timed("expression parser", run)


ACCEPTANCE = (check_elliptic, check_surface, check_constants, check_compatibility,
              check_contraction, check_schemes, check_energy, check_delta_limit,
              check_concentration, check_rearrangement, check_determinism)
INVARIANTS = (check_conservation, check_dissipativity, check_expressions)


def run_checks(level="quick", progress=None):
    quick = level == "quick"
    results = []
    for check in INVARIANTS + ACCEPTANCE:
        res = check(quick=quick)
        results.append(res)
        if progress is not None:
            progress(res)
    return results


def _fmt(values):
    return "[" + ", ".join(f"{v:.4g}" for v in values) + "]"
