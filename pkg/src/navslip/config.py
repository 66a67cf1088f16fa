"""Run configuration: TOML parsing, defaults and validation.

Sections are ``geometry``, ``scenario`` (with an optional ``params``
sub-table), ``solver``, ``sweep`` and ``output``. Unknown sections or keys
are errors in strict mode and warnings otherwise.
"""

from __future__ import annotations

import sys
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ParseError, ValidationError
from .geometry import DomainGeometry
from .scenarios import REGISTRY
from .transport import SolverParams

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

CHECKS = (
    "max_principle",
    "lp_budget",
    "lp_equality",
    "gronwall",
    "p_infinity",
    "time_lipschitz",
    "weak_form",
    "strip",
)
DENSE_CHECKS = ("gronwall", "time_lipschitz")


@dataclass
class GeometryConfig:
    kind: str = "annulus"
    r_inner: float = 0.5
    r_outer: float = 1.0
    n_r: int = 32
    n_s: int = 0  # 0 means 2 n_r


@dataclass
class ScenarioConfig:
    name: str = "solid_rotation"
    params: dict = field(default_factory=dict)
    derivative: str = "spectral"
    smooth_s: bool = False
    smooth_t: bool = False
    seed: int = 0


@dataclass
class SolverConfig:
    method: str = "march"
    nu: float = 0.0
    R: float = 0.0  # 0 means 1/theta (or no cutoff when theta = 0)
    theta: float = 0.0
    dt: float = 0.0  # 0 means CFL-adaptive
    T: float = 1.0
    cfl: float = 0.5
    p: float = 4.0
    scheme: str = "upwind"
    steps_per_window: int = 8
    max_iters: int = 30
    tol: float = 1e-8


@dataclass
class SweepConfig:
    nu_list: list = field(default_factory=list)
    theta_list: list = field(default_factory=list)
    grid_list: list = field(default_factory=list)


@dataclass
class OutputConfig:
    directory: str = "navslip-out"
    snapshot_every: int = 0  # 0 means first and last level only
    checks: list = field(default_factory=lambda: ["max_principle", "lp_budget"])
    strict: bool = True


@dataclass
class RunConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def geom(self) -> DomainGeometry:
        g = self.geometry
        return DomainGeometry(kind=g.kind, r_inner=g.r_inner, r_outer=g.r_outer, n_s=g.n_s or 2 * g.n_r)

    def solver_params(self) -> SolverParams:
        s = self.solver
        return SolverParams(
            nu=s.nu, R=s.R or None, theta=s.theta, dt=s.dt or None, T=s.T, cfl=s.cfl, p=s.p,
            scheme=s.scheme,
        )

    def problem_kwargs(self) -> dict:
        """Keyword arguments for :func:`navslip.scenarios.build_problem`."""
        g, sc = self.geometry, self.scenario
        return dict(
            scenario=sc.name, n_r=g.n_r, n_s=g.n_s or 2 * g.n_r, kind=g.kind, r_inner=g.r_inner,
            r_outer=g.r_outer, theta=self.solver.theta, T=self.solver.T,
            scenario_params=dict(sc.params), derivative=sc.derivative, smooth_s=sc.smooth_s,
            smooth_t=sc.smooth_t,
        )

    def to_dict(self) -> dict:
        return asdict(self)


SECTIONS = {
    "geometry": GeometryConfig,
    "scenario": ScenarioConfig,
    "solver": SolverConfig,
    "sweep": SweepConfig,
    "output": OutputConfig,
}


def _coerce(section, key, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ParseError(f"[{section}] {key}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ParseError(f"[{section}] {key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ParseError(f"[{section}] {key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ParseError(f"[{section}] {key}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ParseError(f"[{section}] {key}: expected a list, got {value!r}")
        return list(value)
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ParseError(f"[{section}] {key}: expected a table, got {value!r}")
        return dict(value)
    return value


def _build_section(name, cls, table, strict):
    obj = cls()
    known = {f.name for f in fields(cls)}
    for key, value in table.items():
        if key not in known:
            msg = f"[{name}] unknown key {key!r}"
            if strict:
                raise ParseError(msg)
            warnings.warn(msg, stacklevel=3)
            continue
        setattr(obj, key, _coerce(name, key, value, getattr(obj, key)))
    return obj


def config_from_dict(raw: dict, base_dir=None, strict: bool | None = None) -> RunConfig:
    """Build and validate a :class:`RunConfig` from a parsed TOML document.

    Relative ``scenario.params.path`` entries are resolved against
    ``base_dir``.
    """
    if "geometry" not in raw:
        raise ParseError("missing [geometry] section")
    if strict is None:
        out = raw.get("output", {})
        strict = out.get("strict", True) if isinstance(out, dict) else True
    for name in raw:
        if name not in SECTIONS:
            msg = f"unknown section [{name}]"
            if strict:
                raise ParseError(msg)
            warnings.warn(msg, stacklevel=2)
    parts = {}
    for name, cls in SECTIONS.items():
        table = raw.get(name, {})
        if not isinstance(table, dict):
            raise ParseError(f"[{name}] must be a table")
        parts[name] = _build_section(name, cls, table, strict)
    cfg = RunConfig(**parts)
    path = cfg.scenario.params.get("path")
    if isinstance(path, str) and path and base_dir is not None and not Path(path).is_absolute():
        cfg.scenario.params["path"] = str((Path(base_dir) / path).resolve())
    validate(cfg)
    return cfg


def parse_config(path, strict: bool | None = None) -> RunConfig:
    """Read, fill defaults and validate a TOML run configuration.

    Raises
    ------
    ParseError
        Unreadable file, TOML syntax error (with line and column), missing
        ``[geometry]`` section, unknown key in strict mode or a value of
        the wrong type.
    ValidationError
        Listing every out-of-range parameter.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return config_from_dict(raw, base_dir=path.parent, strict=strict)


def _theta_problem(theta, T, sigma0, label="theta"):
    if theta == 0:
        return None
    limit = min(sigma0, T / 4.0)
    if not 0 < theta < limit:
        which = "T/4" if T / 4.0 <= sigma0 else "sigma0"
        return f"{label} = {theta:g} must lie in (0, min(sigma0, T/4)) = (0, {limit:g}); violates theta < {which}"
    return None


def validate(cfg: RunConfig):
    """Raise :class:`ValidationError` listing every violated range."""
    problems = []
    g, sc, s, sw, out = cfg.geometry, cfg.scenario, cfg.solver, cfg.sweep, cfg.output
    if g.kind not in ("annulus", "disk"):
        problems.append(f"geometry.kind {g.kind!r} must be 'annulus' or 'disk'")
    if not 0 < g.r_inner < g.r_outer:
        problems.append(f"geometry radii need 0 < r_inner < r_outer (got {g.r_inner:g}, {g.r_outer:g})")
    if g.n_r < 4:
        problems.append(f"geometry.n_r = {g.n_r} must be at least 4")
    if g.n_s and g.n_s < 8:
        problems.append(f"geometry.n_s = {g.n_s} must be at least 8")
    if sc.name not in REGISTRY:
        problems.append(f"unknown scenario {sc.name!r}")
    if sc.derivative not in ("spectral", "fd"):
        problems.append(f"scenario.derivative {sc.derivative!r} must be 'spectral' or 'fd'")
    if s.method not in ("march", "picard"):
        problems.append(f"solver.method {s.method!r} must be 'march' or 'picard'")
    if not (s.nu == 0 or 0 < s.nu < 1):
        problems.append(f"solver.nu = {s.nu:g} must be 0 or lie in (0, 1)")
    if not s.T > 0:
        problems.append(f"solver.T = {s.T:g} must be positive")
    sigma0 = 0.5 * (g.r_outer - g.r_inner)
    if s.T > 0:
        msg = _theta_problem(s.theta, s.T, sigma0, "solver.theta")
        if msg:
            problems.append(msg)
    if s.theta < 0:
        problems.append(f"solver.theta = {s.theta:g} must be nonnegative")
    if s.R < 0:
        problems.append(f"solver.R = {s.R:g} must be positive (or 0 for the default)")
    if s.dt < 0:
        problems.append(f"solver.dt = {s.dt:g} must be positive (or 0 for CFL-adaptive)")
    if not 0 < s.cfl <= 1:
        problems.append(f"solver.cfl = {s.cfl:g} must lie in (0, 1]")
    if not s.p > 2:
        problems.append(f"solver.p = {s.p:g} must exceed 2")
    if s.scheme not in ("upwind", "minmod"):
        problems.append(f"solver.scheme {s.scheme!r} must be 'upwind' or 'minmod'")
    if s.method == "picard":
        if not (s.nu > 0 and s.theta > 0):
            problems.append("solver.method = 'picard' needs nu > 0 and theta > 0")
        if s.steps_per_window < 1:
            problems.append("solver.steps_per_window must be at least 1")
    if s.max_iters < 1:
        problems.append("solver.max_iters must be at least 1")
    if not s.tol > 0:
        problems.append("solver.tol must be positive")
    nus = sw.nu_list
    if nus:
        if any(not isinstance(x, (int, float)) or not 0 < x < 1 for x in nus):
            problems.append("sweep.nu_list entries must lie in (0, 1)")
        elif any(b >= a for a, b in zip(nus, nus[1:])):
            problems.append("sweep.nu_list must be strictly decreasing")
    for th in sw.theta_list:
        if not isinstance(th, (int, float)):
            problems.append(f"sweep.theta_list entry {th!r} is not a number")
            continue
        msg = _theta_problem(float(th), s.T, sigma0, "sweep.theta_list entry") if s.T > 0 else None
        if msg:
            problems.append(msg)
    for n in sw.grid_list:
        if isinstance(n, bool) or not isinstance(n, int) or n < 4:
            problems.append(f"sweep.grid_list entry {n!r} must be an integer n_r >= 4")
    for c in out.checks:
        if c not in CHECKS:
            problems.append(f"unknown check {c!r} (known: {', '.join(CHECKS)})")
    if out.snapshot_every < 0:
        problems.append("output.snapshot_every must be nonnegative")
    target = Path(out.directory)
    probe = target
    while not probe.exists() and probe.parent != probe:
        probe = probe.parent
    if probe.exists() and not probe.is_dir():
        problems.append(f"output.directory {out.directory!r} is not a directory")
    if problems:
        raise ValidationError(problems)
    return cfg
