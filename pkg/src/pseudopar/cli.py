"""Command-line entry point: ``pseudopar <subcommand> --config run.json --out dir``.

Exit codes: 0 success, 2 configuration error, 3 numerical-invariant failure,
4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import warnings

import numpy as np

from . import fem
from .config import config_from_dict, serialize_config
from .errors import (ConfigError, GeometryError, InvalidMeshSpec, ParseError, PseudoparError,
                     SnapError, StiffnessWarning)
from .expr import parse_expr
from .mesh import inclusion_mesh, thicken_interfaces, write_mesh
from .output import fmt, write_atomic, write_csv

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

THIN_HEADER = ["t", "component", "ell", "c", "total_jump_flux", "bulk_energy",
               "surface_grad_energy"]
THICK_HEADER = ["t", "component", "flux_residual", "flux_scale", "membrane_energy",
                "conductor_energy"]
FIELD_HEADER = ["node", "x", "y", "value"]
CONCENTRATION_HEADER = ["eta", "t", "discrepancy"]
DELTA_HEADER = ["delta", "distance", "energy_lhs", "energy_rhs"]

PROBLEM_OF = {"run-thin": "thin", "run-thick": "thick", "concentration": "concentration",
              "delta-study": "delta_study"}
_CONFIG_ERRORS = (ConfigError, InvalidMeshSpec, SnapError, GeometryError, ParseError)


def _load(args, problem=None):
    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise _IOFailure(f"cannot read config: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    if problem is not None:
        if data.get("problem", problem) != problem:
            raise ConfigError(f"config is for problem {data['problem']!r}, not {problem!r}")
        data["problem"] = problem
    cfg = config_from_dict(data)
    if args.out is not None:
        cfg.out_dir = args.out
    return cfg


class _IOFailure(Exception):
    pass


def _prepare_out(cfg):
    try:
        os.makedirs(cfg.out_dir, exist_ok=True)
    except OSError as exc:
        raise _IOFailure(f"cannot create output directory: {exc}") from exc
    write_atomic(os.path.join(cfg.out_dir, "config.json"), serialize_config(cfg))


def _base_mesh(cfg):
    return inclusion_mesh(cfg.n, [tuple(b) for b in cfg.boxes])


def _sampler(text):
    e = parse_expr(text)

    def sample(nodes, t=0.0):
        return np.broadcast_to(e(nodes[:, 0], nodes[:, 1], t), (len(nodes),)).astype(float)
    return sample


def _steps_for(times, dt):
    return sorted({int(round(t / dt)) for t in times})


def _dump_fields(cfg, prefix, mesh, fields, dt):
    for k in _steps_for(cfg.dump_times, dt):
        rows = [(i, x, y, v) for i, ((x, y), v) in enumerate(zip(mesh.nodes, fields[k]))]
        write_csv(os.path.join(cfg.out_dir, f"{prefix}_step{k:05d}.csv"), FIELD_HEADER, rows)


def cmd_mesh(cfg, args):
    mesh = _base_mesh(cfg)
    if cfg.k is not None:
        mesh = thicken_interfaces(mesh, cfg.k)
    _prepare_out(cfg)
    write_mesh(mesh, os.path.join(cfg.out_dir, "mesh.txt"))
    return (f"mesh: {mesh.n_nodes} nodes, {len(mesh.triangles)} triangles, "
            f"{mesh.n_components} components" + (f", eta={mesh.eta!r}" if mesh.eta else ""))


def cmd_run_thin(cfg, args):
    from .thin import ThinConfig, ThinSolver
    mesh = _base_mesh(cfg)
    f, u0 = _sampler(cfg.f_expr), _sampler(cfg.u0_expr)
    X = mesh.nodes
    tcfg = ThinConfig(dt=cfg.dt, T=cfg.T, alpha=cfg.alpha, sigma_int=cfg.sigma_int,
                      sigma_out=cfg.sigma_out, scheme=cfg.scheme, window=cfg.window,
                      picard_tol=cfg.picard_tol, max_sweeps=cfg.max_sweeps,
                      quadrature=cfg.quadrature, cg_tol=cfg.cg_tol, threads=args.threads)
    solver = ThinSolver(mesh, tcfg, lambda t: f(X, t), u0(X)[mesh.loop_node_ids()],
                        keep_fields=bool(cfg.dump_times))
    state = solver.run()
    worst = solver.max_compatibility_residual(state)
    if worst > 1e-8:
        raise _InvariantFailure("flux-compatibility", f"relative jump-flux total {worst:.3e}")
    rows = []
    for k, t in enumerate(state.times):
        for i in range(mesh.n_components):
            rows.append((t, i + 1, state.ell[k][i], state.c[k][i], state.jump_totals[k][i],
                         state.bulk_energy[k], state.surface_energy[k][i]))
    _prepare_out(cfg)
    write_csv(os.path.join(cfg.out_dir, "thin.csv"), THIN_HEADER, rows)
    if cfg.dump_times:
        _dump_fields(cfg, "thin_u", mesh, state.u, cfg.dt)
    lhs, rhs, ratio = solver.energy_audit(state)
    return (f"thin: T={fmt(cfg.T)} bulk_energy={state.bulk_energy[-1]:.6g} "
            f"surface_energy={float(np.sum(state.surface_energy[-1])):.6g} "
            f"max_compat={worst:.2e} c(t0)=[{', '.join(f'{c:.6g}' for c in state.c[0])}] "
            f"energy_ratio={ratio:.4g}")


def _thick_config(cfg, **over):
    from .thick import ThickConfig
    kw = dict(dt=cfg.dt, T=cfg.T, delta=cfg.delta, alpha=cfg.alpha, sigma_int=cfg.sigma_int,
              sigma_out=cfg.sigma_out, scheme=cfg.scheme, window=cfg.window,
              picard_tol=cfg.picard_tol, max_sweeps=cfg.max_sweeps, quadrature=cfg.quadrature,
              cg_tol=cfg.cg_tol)
    kw.update(over)
    return ThickConfig(**kw)


def cmd_run_thick(cfg, args):
    from .thick import ThickSolver
    mesh = thicken_interfaces(_base_mesh(cfg), cfg.k)
    f, u0 = _sampler(cfg.f_expr), _sampler(cfg.u0_expr)
    X = mesh.nodes
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", StiffnessWarning)
        solver = ThickSolver(mesh, _thick_config(cfg), lambda t: f(X, t), u0(X))
    state = solver.run()
    if not all(np.all(np.isfinite(u)) for u in state.u):
        raise _InvariantFailure("finite-field", "thick run produced non-finite values")
    rows = []
    for k, t in enumerate(state.times):
        em, ec = solver.energies(state.u[k])
        for i, (res, scale) in enumerate(solver.flux_condition_check(state, k), start=1):
            rows.append((t, i, res, scale, em, ec))
    _prepare_out(cfg)
    write_csv(os.path.join(cfg.out_dir, "thick.csv"), THICK_HEADER, rows)
    if cfg.dump_times:
        _dump_fields(cfg, "thick_u", mesh, state.u, cfg.dt)
    lhs, rhs, ratio = solver.energy_audit(state)
    em, ec = solver.energies(state.u[-1])
    note = " (stiff explicit step)" if caught else ""
    return (f"thick: T={fmt(cfg.T)} delta={fmt(cfg.delta)} membrane_energy={em:.6g} "
            f"conductor_energy={ec:.6g} final_flux_residual={rows[-1][2]:.2e} "
            f"energy_ratio={ratio:.4g}{note}")


def cmd_concentration(cfg, args):
    from .thick import concentration_run
    from .thin import ThinConfig, ThinSolver
    base = _base_mesh(cfg)
    f, u0 = _sampler(cfg.f_expr), _sampler(cfg.u0_expr)
    X = base.nodes
    tcfg = ThinConfig(dt=cfg.dt, T=cfg.T, alpha=cfg.alpha, sigma_int=cfg.sigma_int,
                      sigma_out=cfg.sigma_out, cg_tol=cfg.cg_tol, threads=args.threads)
    thin = ThinSolver(base, tcfg, lambda t: f(X, t), u0(X)[base.loop_node_ids()])
    hist = thin.run()
    times = cfg.sample_times or [cfg.T / 4, cfg.T / 2, cfg.T]
    steps = _steps_for(times, cfg.dt)
    rows = concentration_run(base, cfg.ks, _thick_config(cfg, delta=0.0, scheme="implicit"),
                             f, u0, hist.h, steps)
    _prepare_out(cfg)
    write_csv(os.path.join(cfg.out_dir, "concentration.csv"), CONCENTRATION_HEADER,
              [(r.eta, r.t, r.discrepancy) for r in rows])
    last = [r for r in rows if r.t == rows[-1].t]
    return "concentration: " + ", ".join(f"eta={r.eta:g}: {r.discrepancy:.4g}" for r in last)


def cmd_delta_study(cfg, args):
    from .thick import delta_study
    mesh = thicken_interfaces(_base_mesh(cfg), cfg.k)
    f, u0 = _sampler(cfg.f_expr), _sampler(cfg.u0_expr)
    X = mesh.nodes
    rows = delta_study(mesh, _thick_config(cfg, scheme="implicit"), lambda t: f(X, t), u0(X),
                       cfg.deltas)
    _prepare_out(cfg)
    write_csv(os.path.join(cfg.out_dir, "delta_study.csv"), DELTA_HEADER,
              [(r.delta, r.distance, r.energy_lhs, r.energy_rhs) for r in rows])
    return "delta-study: " + ", ".join(f"delta={r.delta:g}: {r.distance:.4g}" for r in rows)


def cmd_verify(args):
    from .checks import run_checks
    if args.inject_fault:
        fem.set_faults([args.inject_fault])
    try:
        results = run_checks(args.level, progress=None if args.quiet else
                             (lambda r: print(r.line(), flush=True)))
    finally:
        fem.set_faults()
    failed = [r for r in results if not r.passed]
    if args.quiet:
        for r in failed:                     # failures are always reported
            print(r.line())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_csv(os.path.join(args.out, "verify.csv"), ["check", "passed", "seconds", "detail"],
                  [(r.name, int(r.passed), round(r.seconds, 3), '"' + r.detail.replace('"', "'") + '"')
                   for r in results])
    print(f"verify {args.level}: {len(results) - len(failed)}/{len(results)} passed")
    return EXIT_NUMERIC if failed else EXIT_OK


class _InvariantFailure(Exception):
    def __init__(self, invariant, message):
        super().__init__(message)
        self.invariant = invariant


COMMANDS = {"mesh": cmd_mesh, "run-thin": cmd_run_thin, "run-thick": cmd_run_thick,
            "concentration": cmd_concentration, "delta-study": cmd_delta_study}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pseudopar", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None, help="output directory (overrides out_dir)")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--quiet", action="store_true")
    p = sub.add_parser("verify")
    p.add_argument("--level", choices=("quick", "full"), default="quick")
    p.add_argument("--out", default=None)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--inject-fault", choices=("offdiag-sign",), default=None,
                   help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.threads < 1:
        print("error [config]: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "verify":
            return cmd_verify(args)
        cfg = _load(args, PROBLEM_OF.get(args.command))
        summary = COMMANDS[args.command](cfg, args)
    except _CONFIG_ERRORS as exc:
        print(f"error [{exc.invariant}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _IOFailure as exc:
        print(f"error [io]: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error [io]: {exc}", file=sys.stderr)
        return EXIT_IO
    except _InvariantFailure as exc:
        print(f"error [{exc.invariant}]: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except PseudoparError as exc:
        print(f"error [{exc.invariant}]: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if not args.quiet:
        print(summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
