"""Time evolution of the thin-interface problem.

The interface trace h(t) is the unknown. Given h, the bulk potential solves a
Dirichlet transmission problem, its flux jump drives the surface equation
−α Δ^B v = [σ ∂u/∂ν], and the trace is advanced by integrating v and
re-projecting onto the flux-constrained set H_ℓ(t).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import coupling, fem, linalg
from .errors import ConfigError, ContractionFailure
from .fem import CoefficientMap
from .mesh import Mesh
from .surface import (build_surface_operator, surface_grad_energy, surface_gradient,
                      surface_h1_norm, surface_l2_norm)

Source = Callable[[float], np.ndarray]


@dataclass
class ThinConfig:
    dt: float
    T: float
    alpha: float = 1.0
    sigma_int: float = 1.0
    sigma_out: float = 1.0
    scheme: str = "marching"            # marching | picard
    window: float | None = None         # initial Picard window length; default: whole run
    picard_tol: float = 1e-8            # relative to the trace size
    max_sweeps: int = 60
    quadrature: str = "trapezoid"       # time integral inside Picard: trapezoid | left
    stall_ratio: float = 0.95
    cg_tol: float = 1e-12
    compat_tol: float = linalg.COMPAT_TOL
    threads: int = 1

    def __post_init__(self):
        if not self.dt > 0 or not self.T > 0:
            raise ConfigError("dt and T must be positive")
        if self.scheme not in ("marching", "picard"):
            raise ConfigError(f"unknown thin scheme {self.scheme!r}")
        if self.quadrature not in ("trapezoid", "left"):
            raise ConfigError(f"unknown quadrature {self.quadrature!r}")
        if min(self.alpha, self.sigma_int, self.sigma_out) <= 0:
            raise ConfigError("alpha, sigma_int and sigma_out must be positive")
        _steps(self.T, self.dt)
        if self.window is not None:
            _steps(self.window, self.dt)


def _steps(length, dt):
    n = round(length / dt)
    if n < 1 or abs(n * dt - length) > 1e-9 * max(length, 1.0):
        raise ConfigError(f"{length} is not a positive multiple of dt={dt}")
    return n


@dataclass
class WindowReport:
    t_start: float
    t_end: float
    window: float
    sweeps: int
    increments: list
    ratios: list
    halvings: int


@dataclass
class ThinState:
    times: np.ndarray
    h: list = field(default_factory=list)        # trace per level
    c: list = field(default_factory=list)        # projection constants per level
    ell: list = field(default_factory=list)      # targets per level
    v: list = field(default_factory=list)        # surface velocity per level
    jump_totals: list = field(default_factory=list)
    jump_scale: list = field(default_factory=list)
    bulk_energy: list = field(default_factory=list)      # ∫_Ω |∇u|²
    surface_energy: list = field(default_factory=list)   # ∫_{Γ_i} |∇^B u|² per component
    u: list | None = None
    windows: list = field(default_factory=list)

    @property
    def n_levels(self) -> int:
        return len(self.h)


class ThinSolver:
    def __init__(self, mesh: Mesh, config: ThinConfig, source: Source, u0_trace,
                 keep_fields: bool = False):
        if not mesh.loops or mesh.is_thick:
            raise ConfigError("thin solver needs a thin mesh with interface loops")
        self.mesh = mesh
        self.cfg = config
        self.source = source
        self.u0 = np.array(u0_trace, dtype=float)
        if self.u0.shape != (len(mesh.loop_node_ids()),):
            raise ConfigError("initial trace must have one value per loop node")
        self.sigma = CoefficientMap(outer=config.sigma_out, inclusion=config.sigma_int)
        self.op = build_surface_operator(mesh)
        self.cs = coupling.build_constants_system(mesh, config.sigma_out, threads=config.threads,
                                                  tol=config.cg_tol)
        self.n_steps = _steps(config.T, config.dt)
        self.times = config.dt * np.arange(self.n_steps + 1)
        self.keep_fields = keep_fields
        self._f: dict = {}
        self._ell: dict = {}

    # ------------------------------------------------------------ pieces
    def f(self, k: int) -> np.ndarray:
        if k not in self._f:
            val = np.broadcast_to(np.asarray(self.source(self.times[k]), dtype=float),
                                  (self.mesh.n_nodes,)).copy()
            self._f[k] = val
        return self._f[k]

    def targets(self, k: int) -> np.ndarray:
        """ℓ(t_k); needs one zero-trace solve."""
        if k not in self._ell:
            tol = self.cfg.cg_tol
            fk = self.f(k)
            ubar = fem.solve_zero_trace(self.mesh, self.sigma, fk, tol=tol)
            self._ell[k] = coupling.compute_targets(self.mesh, self.cfg.sigma_out, fk, ubar, tol=tol)
        return self._ell[k]

    def project(self, w, k: int):
        return coupling.project_to_Hl(self.cs, self.mesh, w, self.targets(k), tol=self.cfg.cg_tol)

    def velocity(self, h, k: int):
        """Surface velocity for trace ``h`` at level k; returns (v, u, flux functional)."""
        tol = self.cfg.cg_tol
        u = fem.solve_transmission(self.mesh, self.sigma, self.f(k), h, tol=tol)
        J = coupling.jump_flux(self.mesh, self.sigma, self.f(k), u, tol=tol)
        v = surface_lb(self.op, self.cfg.alpha, J, tol, self.cfg.compat_tol)
        return v, u, J

    def initial_state(self) -> ThinState:
        h0, c0 = self.project(self.u0, 0)
        state = ThinState(times=self.times, u=[] if self.keep_fields else None)
        state.h.append(h0)
        state.c.append(c0)
        state.ell.append(self.targets(0))
        return state

    def _record(self, state: ThinState, k: int, v, u, J):
        """Diagnostics of level k (h[k] already stored)."""
        while len(state.v) <= k:
            state.v.append(None)
            state.jump_totals.append(None)
            state.jump_scale.append(None)
            state.bulk_energy.append(None)
            state.surface_energy.append(None)
            if state.u is not None:
                state.u.append(None)
        state.v[k] = v
        state.jump_totals[k] = J.totals
        state.jump_scale[k] = J.scale
        state.bulk_energy[k] = fem.field_norms(u, self.mesh)[1] ** 2
        state.surface_energy[k] = np.array([surface_grad_energy(self.op, state.h[k], i)
                                            for i in range(self.op.n_components)])
        if state.u is not None:
            state.u[k] = u

    # ------------------------------------------------------------ marching
    def thin_step(self, state: ThinState, k: int) -> ThinState:
        """Advance from level k to k+1 by explicit trace marching."""
        if state.n_levels != k + 1:
            raise ValueError(f"state holds {state.n_levels} levels, cannot step from {k}")
        v, u, J = self.velocity(state.h[k], k)
        self._record(state, k, v, u, J)
        w = state.h[k] + self.cfg.dt * v
        h_next, c_next = self.project(w, k + 1)
        state.h.append(h_next)
        state.c.append(c_next)
        state.ell.append(self.targets(k + 1))
        return state

    def _finish(self, state: ThinState) -> ThinState:
        k = state.n_levels - 1
        v, u, J = self.velocity(state.h[k], k)
        self._record(state, k, v, u, J)
        return state

    def run_marching(self) -> ThinState:
        state = self.initial_state()
        for k in range(self.n_steps):
            self.thin_step(state, k)
        return self._finish(state)

    # ------------------------------------------------------------ Picard
    def _quadrature_weights(self, j: int):
        """Weights of v_0..v_j for ∫_{t_0}^{t_j} v (relative to the window start)."""
        dt = self.cfg.dt
        wts = np.full(j + 1, dt)
        if self.cfg.quadrature == "left":
            wts[j] = 0.0
        else:
            wts[0] = wts[j] = 0.5 * dt
            if j == 0:
                wts[0] = 0.0
        return wts

    def run_picard_window(self, state: ThinState, k0: int, n_window: int) -> WindowReport:
        """Fixed-point iteration of the trace map on levels k0..k0+n_window.

        Appends the converged levels to ``state``. Halves the window when the
        increments stall and raises ContractionFailure once it would drop below dt.
        """
        cfg = self.cfg
        halvings = 0
        h_start = state.h[k0]
        v_start, u_start, J_start = self.velocity(h_start, k0)
        while True:
            k1 = min(k0 + n_window, self.n_steps)
            levels = range(k0 + 1, k1 + 1)
            hs = {k: self.project(h_start, k)[0] for k in levels}
            increments, ratios = [], []
            stalls = 0
            converged = False
            for sweep in range(1, cfg.max_sweeps + 1):
                vs = {k0: v_start}
                diag = {}
                for k in levels:
                    vs[k], u, J = self.velocity(hs[k], k)
                    diag[k] = (u, J)
                new, consts = {}, {}
                for k in levels:
                    j = k - k0
                    wts = self._quadrature_weights(j)
                    w = h_start + sum(wts[i] * vs[k0 + i] for i in range(j + 1) if wts[i] != 0.0)
                    new[k], consts[k] = self.project(w, k)
                inc = max(surface_h1_norm(self.op, new[k] - hs[k]) for k in levels)
                size = max(surface_h1_norm(self.op, new[k]) for k in levels)
                increments.append(inc)
                if len(increments) > 1:
                    prev = increments[-2]
                    ratios.append(inc / prev if prev > 0 else 0.0)
                    stalls = stalls + 1 if ratios[-1] >= cfg.stall_ratio else 0
                hs = new
                if inc <= cfg.picard_tol * size or inc == 0.0:
                    converged = True
                    break
                if stalls >= 2:
                    break
            if converged:
                break
            n_window //= 2
            halvings += 1
            if n_window < 1:
                raise ContractionFailure(
                    f"Picard window at t={self.times[k0]:.6g} shrank below dt without contracting")

        if state.n_levels == k0 + 1:
            self._record(state, k0, v_start, u_start, J_start)
        for k in levels:
            state.h.append(hs[k])
            state.c.append(consts[k])
            state.ell.append(self.targets(k))
            if k < k1:
                # diagnostics for interior levels come from the last evaluation
                u, J = diag[k]
                self._record(state, k, vs[k], u, J)
        report = WindowReport(float(self.times[k0]), float(self.times[k1]),
                              n_window * cfg.dt, sweep, increments, ratios, halvings)
        state.windows.append(report)
        return report

    def run_picard(self) -> ThinState:
        state = self.initial_state()
        n_window = self.n_steps if self.cfg.window is None else _steps(self.cfg.window, self.cfg.dt)
        k0 = 0
        while k0 < self.n_steps:
            report = self.run_picard_window(state, k0, n_window)
            n_window = round(report.window / self.cfg.dt)
            k0 = state.n_levels - 1
        return self._finish(state)

    def run(self) -> ThinState:
        return self.run_picard() if self.cfg.scheme == "picard" else self.run_marching()

    # ------------------------------------------------------------ reports
    def energy_audit(self, state: ThinState):
        """(LHS, RHS, LHS/RHS²) of the thin energy inequality on the discrete history."""
        dt = self.cfg.dt
        n = state.n_levels - 1
        lhs = dt * sum(state.bulk_energy[:n]) + max(float(np.sum(e)) for e in state.surface_energy)
        w = fem.lumped_weights(self.mesh)
        f_norm = math.sqrt(dt * sum(float(w @ self.f(k) ** 2) for k in range(n)))
        rhs = f_norm + surface_h1_norm(self.op, self.u0)
        ratio = lhs / rhs ** 2 if rhs > 0 else 0.0
        return lhs, rhs, ratio

    def rearrangement_report(self, state: ThinState):
        """Per component: (c_i(t_0), ‖h(t_0) − ū₀‖_{L²(Γ_i)}, |c_i|·√perimeter_i)."""
        rows = []
        diff = state.h[0] - self.u0
        for i in range(self.op.n_components):
            c = float(state.c[0][i])
            rows.append((c, surface_l2_norm(self.op, diff, i),
                         abs(c) * math.sqrt(self.op.perimeters[i])))
        return rows

    def initial_gradient_gap(self, state: ThinState) -> float:
        return float(np.max(np.abs(surface_gradient(self.op, state.h[0])
                                   - surface_gradient(self.op, self.u0)), initial=0.0))

    def max_compatibility_residual(self, state: ThinState) -> float:
        """max over levels/components of |jump total| / term scale."""
        worst = 0.0
        for tot, sc in zip(state.jump_totals, state.jump_scale):
            if tot is None:
                continue
            rel = np.abs(tot) / np.maximum(sc, 1e-300)
            rel[sc == 0] = 0.0
            worst = max(worst, float(rel.max()))
        return worst


def surface_lb(op, alpha, J: coupling.FluxFunctional, tol, compat_tol):
    from .surface import lb_solve
    return lb_solve(op, alpha, J.values, tol=tol, compat_tol=compat_tol, scale=J.scale)
