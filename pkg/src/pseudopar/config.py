"""Run configuration: a flat JSON document mapped onto ``RunConfig``."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError, ParseError
from .expr import parse_expr

PROBLEMS = ("thin", "thick", "concentration", "delta_study")
SCHEMES = {"thin": ("marching", "picard"), "thick": ("implicit", "explicit", "picard"),
           "concentration": ("implicit",), "delta_study": ("implicit",)}
DEFAULT_SEED = 20240531


@dataclass
class RunConfig:
    problem: str = "thin"
    # mesh
    n: int = 16
    boxes: list = field(default_factory=lambda: [[0.25, 0.25, 0.75, 0.75]])
    k: int | None = None                 # membrane half-width in cells (thick)
    # physics
    sigma_int: float = 1.0
    sigma_out: float = 1.0
    alpha: float = 1.0
    delta: float = 0.0
    # time
    T: float = 0.5
    dt: float = 0.05
    scheme: str | None = None            # default depends on the problem
    window: float | None = None
    picard_tol: float = 1e-8
    max_sweeps: int = 60
    quadrature: str = "trapezoid"
    cg_tol: float = 1e-12
    # studies
    deltas: list = field(default_factory=lambda: [0.1, 0.01, 0.001])
    ks: list = field(default_factory=lambda: [4, 2, 1])
    sample_times: list | None = None     # concentration; default: T/4, T/2, T
    # data
    f_expr: str = "0"
    u0_expr: str = "0"
    # output
    dump_times: list = field(default_factory=list)
    out_dir: str = "out"
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"problem must be one of {PROBLEMS}, got {self.problem!r}")
        if self.scheme is None:
            self.scheme = SCHEMES[self.problem][0]
        if self.scheme not in SCHEMES[self.problem]:
            raise ConfigError(f"scheme {self.scheme!r} is not available for {self.problem!r}")
        if not isinstance(self.n, int) or self.n < 2:
            raise ConfigError(f"n must be an integer >= 2, got {self.n!r}")
        for name in ("sigma_int", "sigma_out", "alpha", "T", "dt", "picard_tol", "cg_tol"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be positive, got {v!r}")
        if not (math.isfinite(self.delta) and self.delta >= 0):
            raise ConfigError(f"delta must be >= 0, got {self.delta!r}")
        if self.problem == "thick" and self.scheme in ("explicit", "picard") and self.delta == 0:
            raise ConfigError(f"scheme {self.scheme!r} needs delta > 0")
        if self.problem in ("thick", "delta_study") and self.k is None:
            raise ConfigError(f"problem {self.problem!r} needs the membrane half-width k")
        if self.k is not None and (not isinstance(self.k, int) or self.k < 1):
            raise ConfigError(f"k must be a positive integer, got {self.k!r}")
        if self.quadrature not in ("trapezoid", "left"):
            raise ConfigError(f"quadrature must be 'trapezoid' or 'left', got {self.quadrature!r}")
        if not isinstance(self.max_sweeps, int) or self.max_sweeps < 1:
            raise ConfigError("max_sweeps must be a positive integer")
        if any(not isinstance(b, list) or len(b) != 4 for b in self.boxes):
            raise ConfigError("boxes must be a list of [x0, y0, x1, y1]")
        if any(not (d > 0) for d in self.deltas):
            raise ConfigError("deltas must be positive")
        if any(not isinstance(k, int) or k < 1 for k in self.ks):
            raise ConfigError("ks must be positive integers")
        for name in ("f_expr", "u0_expr"):
            try:
                parse_expr(getattr(self, name))
            except ParseError as exc:
                raise ConfigError(f"{name}: {exc}") from exc
        for t in list(self.dump_times) + list(self.sample_times or []):
            if not (0 <= t <= self.T):
                raise ConfigError(f"time {t!r} outside [0, T]")
        if self.window is not None and not self.window > 0:
            raise ConfigError("window must be positive")


_FLOATS = {"sigma_int", "sigma_out", "alpha", "delta", "T", "dt", "window", "picard_tol", "cg_tol"}
_FLOAT_LISTS = {"deltas", "sample_times", "dump_times"}


def _coerce(name, value):
    """Accept JSON ints for float fields; reject anything of the wrong shape."""
    if value is None:
        return None
    if name in _FLOATS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number")
        return float(value)
    if name in _FLOAT_LISTS:
        if not isinstance(value, list) or any(isinstance(v, bool) or not isinstance(v, (int, float))
                                              for v in value):
            raise ConfigError(f"{name} must be a list of numbers")
        return [float(v) for v in value]
    if name == "boxes":
        if not isinstance(value, list):
            raise ConfigError("boxes must be a list")
        return [[float(c) for c in b] if isinstance(b, list) else b for b in value]
    return value


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        return RunConfig(**{k: _coerce(k, v) for k, v in data.items()})
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def parse_config(text: str) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return config_from_dict(data)


def serialize_config(cfg: RunConfig) -> str:
    """Canonical text: every field, sorted keys, two-space indent."""
    return json.dumps(asdict(cfg), sort_keys=True, indent=2) + "\n"


def normalize_config(text: str) -> str:
    return serialize_config(parse_config(text))


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
