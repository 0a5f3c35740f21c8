"""The δ-regularized thick-membrane evolution.

Unknown: the bulk potential u on the whole square, u = 0 on the boundary.
With K = σ on the conductors (0 on the membrane) and B = α on the membrane
(δ on the conductors) the velocity v = u_t solves

    −div(B ∇v) = div(K ∇u) + f.

Three time schemes share that elliptic operator: implicit Euler (the
production scheme, δ = 0 allowed), explicit Euler, and Picard iteration of
u(t) = ũ₀ + ∫ v over a window.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import coupling, fem, linalg
from .errors import ConfigError, ContractionFailure, GeometryError, InvalidField, StiffnessWarning
from .fem import CoefficientMap, DirichletSystem
from .linalg import SparseSym
from .mesh import INCLUSION, MEMBRANE, OUTER, Mesh, thicken_interfaces
from .surface import build_surface_operator, surface_l2_norm

Source = Callable[[float], np.ndarray]

EXPLICIT_STABILITY = 2.0


def _steps(length, dt):
    n = round(length / dt)
    if n < 1 or abs(n * dt - length) > 1e-9 * max(length, 1.0):
        raise ConfigError(f"{length} is not a positive multiple of dt={dt}")
    return n


@dataclass
class ThickConfig:
    dt: float
    T: float
    delta: float = 0.0
    alpha: float = 1.0                  # B on the membrane
    sigma_int: float = 1.0
    sigma_out: float = 1.0
    scheme: str = "implicit"            # implicit | explicit | picard
    window: float | None = None
    picard_tol: float = 1e-8
    max_sweeps: int = 60
    quadrature: str = "trapezoid"
    stall_ratio: float = 0.95
    cg_tol: float = 1e-12

    def __post_init__(self):
        if not self.dt > 0 or not self.T > 0:
            raise ConfigError("dt and T must be positive")
        if self.scheme not in ("implicit", "explicit", "picard"):
            raise ConfigError(f"unknown thick scheme {self.scheme!r}")
        if self.quadrature not in ("trapezoid", "left"):
            raise ConfigError(f"unknown quadrature {self.quadrature!r}")
        if not (math.isfinite(self.delta) and self.delta >= 0):
            raise ConfigError(f"delta must be >= 0, got {self.delta!r}")
        if self.scheme != "implicit" and self.delta == 0:
            raise ConfigError(f"scheme {self.scheme!r} needs delta > 0")
        if min(self.alpha, self.sigma_int, self.sigma_out) <= 0:
            raise ConfigError("alpha, sigma_int and sigma_out must be positive")
        _steps(self.T, self.dt)
        if self.window is not None:
            _steps(self.window, self.dt)


@dataclass
class ThickState:
    times: np.ndarray
    u: list = field(default_factory=list)
    v: list = field(default_factory=list)
    windows: list = field(default_factory=list)

    @property
    def n_levels(self) -> int:
        return len(self.u)


@dataclass
class WindowReport:
    t_start: float
    t_end: float
    window: float
    sweeps: int
    increments: list
    ratios: list
    halvings: int


def extend_initial(mesh: Mesh, u0, tol=linalg.CG_TOL):
    """Harmonic extension of membrane data to the conductors, zero on ∂Ω.

    ``u0`` is a nodal array; only its values on membrane nodes are read.
    Returns ``(ũ₀, Ĉ)`` with Ĉ = ‖ũ₀‖_{H¹(Ω)} / ‖ū₀‖_{H¹(membrane)} (0 for zero data).
    """
    if not mesh.is_thick:
        raise GeometryError("extend_initial needs a mesh with membrane bands")
    u0 = np.broadcast_to(np.asarray(u0, dtype=float), (mesh.n_nodes,))
    memb = mesh.region_nodes(MEMBRANE)
    if not np.all(np.isfinite(u0[memb])):
        raise InvalidField("initial data has non-finite membrane values")
    key = ("extension-system", tuple(sorted(fem._FAULTS)))
    if key not in mesh._cache:
        A = fem.assemble_stiffness(mesh, CoefficientMap(1.0, 1.0, 1.0))
        mesh._cache[key] = DirichletSystem(A, np.union1d(memb, mesh.boundary_nodes))
    system = mesh._cache[key]
    full = np.zeros(mesh.n_nodes)
    full[memb] = u0[memb]
    full[mesh.boundary_nodes] = 0.0
    ext = system.solve(np.zeros(mesh.n_nodes), full[system.fixed], tol=tol)
    num = math.hypot(*fem.field_norms(ext, mesh))
    den = math.hypot(*fem.field_norms(ext, mesh, kind=MEMBRANE))
    return ext, (num / den if den > 0 else 0.0)


class ThickSolver:
    def __init__(self, mesh: Mesh, config: ThickConfig, source: Source, u0):
        if not mesh.is_thick:
            raise GeometryError("thick solver needs a mesh with membrane bands")
        cfg = config
        self.mesh = mesh
        self.cfg = cfg
        self.source = source
        self.n_steps = _steps(cfg.T, cfg.dt)
        self.times = cfg.dt * np.arange(self.n_steps + 1)
        self.K = CoefficientMap(outer=cfg.sigma_out, inclusion=cfg.sigma_int, membrane=0.0)
        self.B = CoefficientMap(outer=cfg.delta, inclusion=cfg.delta, membrane=cfg.alpha)
        self.A_K = fem.assemble_stiffness(mesh, self.K)
        self.A_B = fem.assemble_stiffness(mesh, self.B)
        self.u0_ext, self.extension_ratio = extend_initial(mesh, u0, tol=cfg.cg_tol)
        self._f: dict = {}
        bnd = mesh.boundary_nodes
        if cfg.scheme == "implicit":
            M = SparseSym(self.A_B.csr + cfg.dt * self.A_K.csr, check=False)
            self._implicit = DirichletSystem(M, bnd)
        else:
            self._velocity_sys = DirichletSystem(self.A_B, bnd)
            if cfg.scheme == "explicit":
                stiff = max(cfg.sigma_int, cfg.sigma_out) * cfg.dt / cfg.delta
                if stiff > EXPLICIT_STABILITY:
                    warnings.warn(f"explicit step is stiff: sigma*dt/delta = {stiff:.3g} "
                                  f"> {EXPLICIT_STABILITY}", StiffnessWarning, stacklevel=2)

    def f(self, k: int) -> np.ndarray:
        if k not in self._f:
            self._f[k] = np.broadcast_to(np.asarray(self.source(self.times[k]), dtype=float),
                                         (self.mesh.n_nodes,)).copy()
        return self._f[k]

    def load(self, k: int) -> np.ndarray:
        return fem.assemble_load(self.mesh, self.f(k))

    def velocity(self, u, k: int) -> np.ndarray:
        """A_B v = −A_K u + F(t_k), v = 0 on ∂Ω (needs δ > 0)."""
        rhs = self.load(k) - self.A_K @ u
        return self._velocity_sys.solve(rhs, 0.0, tol=self.cfg.cg_tol)

    def initial_state(self) -> ThickState:
        return ThickState(times=self.times, u=[self.u0_ext.copy()])

    def thick_step(self, state: ThickState, k: int) -> ThickState:
        if state.n_levels != k + 1:
            raise ValueError(f"state holds {state.n_levels} levels, cannot step from {k}")
        u = state.u[k]
        dt = self.cfg.dt
        if self.cfg.scheme == "implicit":
            rhs = self.A_B @ u + dt * self.load(k)
            u_next = self._implicit.solve(rhs, 0.0, tol=self.cfg.cg_tol, x0=u)
            state.v.append((u_next - u) / dt)
        else:
            v = self.velocity(u, k)
            state.v.append(v)
            u_next = u + dt * v
        state.u.append(u_next)
        return state

    def run_marching(self) -> ThickState:
        state = self.initial_state()
        for k in range(self.n_steps):
            self.thick_step(state, k)
        return state

    def _weights(self, j):
        dt = self.cfg.dt
        wts = np.full(j + 1, dt)
        if self.cfg.quadrature == "left":
            wts[j] = 0.0
        else:
            wts[0] = wts[j] = 0.5 * dt
            if j == 0:
                wts[0] = 0.0
        return wts

    def run_picard_window(self, state: ThickState, k0: int, n_window: int) -> WindowReport:
        cfg = self.cfg
        halvings = 0
        u_start = state.u[k0]
        v_start = self.velocity(u_start, k0)
        while True:
            k1 = min(k0 + n_window, self.n_steps)
            levels = range(k0 + 1, k1 + 1)
            us = {k: u_start for k in levels}
            increments, ratios = [], []
            stalls = 0
            converged = False
            for sweep in range(1, cfg.max_sweeps + 1):
                vs = {k0: v_start}
                for k in levels:
                    vs[k] = self.velocity(us[k], k)
                new = {}
                for k in levels:
                    j = k - k0
                    wts = self._weights(j)
                    new[k] = u_start + sum(wts[i] * vs[k0 + i] for i in range(j + 1)
                                           if wts[i] != 0.0)
                inc = max(fem.field_norms(new[k] - us[k], self.mesh)[1] for k in levels)
                size = max(fem.field_norms(new[k], self.mesh)[1] for k in levels)
                increments.append(inc)
                if len(increments) > 1:
                    prev = increments[-2]
                    ratios.append(inc / prev if prev > 0 else 0.0)
                    stalls = stalls + 1 if ratios[-1] >= cfg.stall_ratio else 0
                us = new
                if inc <= cfg.picard_tol * size or inc == 0.0:
                    converged = True
                    break
                if stalls >= 2 or not math.isfinite(inc):
                    break
            if converged:
                break
            n_window //= 2
            halvings += 1
            if n_window < 1:
                raise ContractionFailure(
                    f"Picard window at t={self.times[k0]:.6g} shrank below dt without contracting")
        if len(state.v) == k0:
            state.v.append(v_start)
        for k in levels:
            state.u.append(us[k])
            if k < k1:
                state.v.append(vs[k])
        report = WindowReport(float(self.times[k0]), float(self.times[k1]), n_window * cfg.dt,
                              sweep, increments, ratios, halvings)
        state.windows.append(report)
        return report

    def run_picard(self) -> ThickState:
        state = self.initial_state()
        n_window = self.n_steps if self.cfg.window is None else _steps(self.cfg.window, self.cfg.dt)
        k0 = 0
        while k0 < self.n_steps:
            report = self.run_picard_window(state, k0, n_window)
            n_window = round(report.window / self.cfg.dt)
            k0 = state.n_levels - 1
        return state

    def run(self) -> ThickState:
        if self.cfg.scheme == "picard":
            return self.run_picard()
        return self.run_marching()

    # ------------------------------------------------------------ reports
    def flux_condition_check(self, state: ThickState, k: int):
        """Per component: (residual, scale) of the outer-band conservation law at level k.

        The outward current through the outer edge of band i, taken in
        residual form from the outer conductor, should equal the source
        integrated over inclusion i and its band.
        """
        mesh = self.mesh
        fk = self.f(k)
        residual, size = coupling._outer_residual(mesh, self.cfg.sigma_out, fk, state.u[k])
        rows = []
        for loop in mesh.outer_loops:
            i = loop.component_id
            current = -float(residual[loop.node_ids].sum())
            mask = np.isin(mesh.region, (INCLUSION, MEMBRANE)) & (mesh.component == i)
            inside = coupling.region_integral(mesh, fk, mask)
            scale = float(size[loop.node_ids].sum()) + abs(inside)
            rows.append((abs(current - inside), scale))
        return rows

    def energies(self, u):
        """(∫_membrane |∇u|², ∫_conductors |∇u|²)."""
        e = fem.gradient_energy_density(self.mesh, u)
        memb = self.mesh.region == MEMBRANE
        return float(e[memb].sum()), float(e[~memb].sum())

    def b_energy(self, u) -> float:
        """½ ∫ B |∇u|²."""
        e = fem.gradient_energy_density(self.mesh, u)
        return 0.5 * float(e @ self.B.per_triangle(self.mesh))

    def energy_audit(self, state: ThickState):
        """(LHS, RHS, LHS/RHS) of the δ-uniform energy bound on the discrete history."""
        dt, delta = self.cfg.dt, self.cfg.delta
        em, ec = zip(*(self.energies(u) for u in state.u))
        lhs = max(em) + delta * max(ec) + dt * sum(ec[1:])
        w = fem.lumped_weights(self.mesh)
        n = state.n_levels - 1
        f_sq = dt * sum(float(w @ self.f(k) ** 2) for k in range(n))
        rhs = f_sq + em[0] + delta * ec[0]
        return lhs, rhs, (lhs / rhs if rhs > 0 else 0.0)

    def mid_trace(self, u) -> np.ndarray:
        """Values on the original thin loops (mid-membrane)."""
        return np.asarray(u)[self.mesh.loop_node_ids()]


# ---------------------------------------------------------------- studies
def h1_distance_history(mesh: Mesh, dt: float, us, refs) -> float:
    """sqrt(Δt Σ_{k≥1} ‖u_k − r_k‖²_{H¹})."""
    total = 0.0
    for a, b in zip(us[1:], refs[1:]):
        l2, semi = fem.field_norms(a - b, mesh)
        total += l2 ** 2 + semi ** 2
    return math.sqrt(dt * total)


@dataclass
class DeltaRow:
    delta: float
    distance: float
    energy_lhs: float
    energy_rhs: float


def delta_study(mesh: Mesh, config: ThickConfig, source: Source, u0, deltas):
    """Implicit runs per δ against the δ = 0 limit problem."""
    deltas = [float(d) for d in deltas]
    if any(d <= 0 for d in deltas) or any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ConfigError("delta list must be positive and strictly decreasing")

    def run(d):
        cfg = _replace(config, delta=d, scheme="implicit")
        solver = ThickSolver(mesh, cfg, source, u0)
        return solver, solver.run()

    _, ref = run(0.0)
    rows = []
    for d in deltas:
        solver, st = run(d)
        lhs, rhs, _ = solver.energy_audit(st)
        rows.append(DeltaRow(d, h1_distance_history(mesh, config.dt, st.u, ref.u), lhs, rhs))
    return rows


def _replace(cfg, **changes):
    from dataclasses import replace
    return replace(cfg, **changes)


@dataclass
class ConcentrationRow:
    eta: float
    t: float
    discrepancy: float


def concentration_run(base: Mesh, ks, config: ThickConfig, source_fn, u0_fn, thin_trace,
                      sample_steps):
    """Compare mid-membrane traces of thickened meshes with a thin-interface history.

    ``source_fn(nodes, t)`` and ``u0_fn(nodes)`` sample the data on any mesh
    (the thickened meshes share the base nodes); ``thin_trace[k]`` is the thin
    trace at level k. The membrane capacity is α/η for band thickness η.
    """
    op = build_surface_operator(base)
    nodes = base.nodes
    rows = []
    for k in ks:
        mesh = thicken_interfaces(base, int(k))
        cfg = _replace(config, alpha=config.alpha / mesh.eta, scheme="implicit")
        solver = ThickSolver(mesh, cfg, lambda t: source_fn(nodes, t), u0_fn(nodes))
        st = solver.run()
        for s in sample_steps:
            gap = solver.mid_trace(st.u[s]) - thin_trace[s]
            rows.append(ConcentrationRow(mesh.eta, float(solver.times[s]), surface_l2_norm(op, gap)))
    return rows
