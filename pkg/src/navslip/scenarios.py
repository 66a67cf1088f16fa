"""Named boundary-data scenarios.

Each factory takes the geometry plus keyword parameters and returns a
:class:`~navslip.boundary_data.BoundaryData`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .boundary_data import BoundaryData, mollify_data, reduce_boundary_data, sample_omega0
from .elliptic import Grid
from .errors import ValidationError
from .geometry import DomainGeometry


def _angle(comp, s):
    return comp.angle_of(s)


def _const(value):
    def fn(comp, s, t):
        return np.full(np.shape(s), float(value))

    return fn


def _yudovich_alpha(comp, s, t):
    return np.full(np.shape(s), 2.0 * comp.curvature)


def zero(geom: DomainGeometry) -> BoundaryData:
    """No flow, no forcing, no initial vorticity."""
    return BoundaryData(alpha=_yudovich_alpha, name="zero")


def solid_rotation(geom: DomainGeometry, c: float = 1.0, vortex_strength: float = 0.0):
    """Rigid rotation ``omega = c`` plus an optional point-vortex part.

    The steady stream function is ``h = c(1 - r^2)/4 + C ln r`` with
    ``C = vortex_strength``; the boundary is impermeable, ``alpha = 2k`` and
    ``b = c``.
    """

    def h_of(r):
        return c * (1.0 - r * r) / 4.0 + vortex_strength * np.log(r)

    def offset(comp, t):
        return float(h_of(comp.radius))

    def omega0(x, y):
        return np.full(np.broadcast(x, y).shape, float(c))

    return BoundaryData(
        alpha=_yudovich_alpha, b=_const(c), omega0=omega0, offset=offset, name="solid_rotation"
    )


def uniform_throughflow(geom: DomainGeometry, eps: float = 1.0):
    """Uniform stream ``v = (eps, 0)`` with zero vorticity.

    ``a = eps e_x . n`` on both circles, ``alpha = 2k`` and ``b = 2a'_s`` so
    that the reduced data vanish: ``gamma = 0``, ``g = 0``.
    """

    def a(comp, s, t):
        return comp.orientation * eps * np.cos(_angle(comp, s))

    def b(comp, s, t):
        # d/ds of orientation*eps*cos(theta) with ds = orientation*r*dtheta
        return -2.0 * eps * np.sin(_angle(comp, s)) / comp.radius

    return BoundaryData(a=a, alpha=_yudovich_alpha, b=b, name="uniform_throughflow", through_flow=True)


def _inflow_weight(theta):
    return np.maximum(0.0, -np.cos(theta)) ** 3


def shear_inflow(
    geom: DomainGeometry,
    a0: float = 1.0,
    gamma0: float = 1.0,
    g0: float = 1.0,
    blob_amp: float = 1.0,
    blob_x: float = 0.0,
    blob_y: float = 0.75,
    blob_width: float = 0.1,
):
    """Through-flow entering on the left half of the outer circle.

    ``a = a0 cos(theta)`` on the outer circle and ``a = 0`` on the inner
    one. The reduced data ``gamma = gamma0 w`` and ``g = g0 w`` with
    ``w = max(0, -cos theta)^3`` are supported on the inflow arc; the raw
    coefficients are ``alpha = 2k - gamma`` and ``b = g + 2 a'_s``. The
    initial vorticity is a Gaussian blob.
    """

    def on_outer(comp):
        return comp.orientation > 0

    def a(comp, s, t):
        if not on_outer(comp):
            return np.zeros(np.shape(s))
        return a0 * np.cos(_angle(comp, s))

    def alpha(comp, s, t):
        base = np.full(np.shape(s), 2.0 * comp.curvature)
        if on_outer(comp):
            base = base - gamma0 * _inflow_weight(_angle(comp, s))
        return base

    def b(comp, s, t):
        if not on_outer(comp):
            return np.zeros(np.shape(s))
        th = _angle(comp, s)
        return g0 * _inflow_weight(th) - 2.0 * a0 * np.sin(th) / comp.radius

    def omega0(x, y):
        rr = (np.asarray(x) - blob_x) ** 2 + (np.asarray(y) - blob_y) ** 2
        return blob_amp * np.exp(-rr / (2.0 * blob_width**2))

    return BoundaryData(
        a=a, alpha=alpha, b=b, omega0=omega0, name="shear_inflow", through_flow=True
    )


@dataclass(frozen=True)
class _Table:
    s: np.ndarray  # sorted, unique
    t: np.ndarray  # sorted, unique
    values: np.ndarray  # (len(t), len(s))
    period: float

    def __call__(self, comp, s, t):
        if self.t.size == 1:
            row = self.values[0]
        else:
            tc = float(np.clip(t, self.t[0], self.t[-1]))
            k = int(np.clip(np.searchsorted(self.t, tc, side="right") - 1, 0, self.t.size - 2))
            w = (tc - self.t[k]) / (self.t[k + 1] - self.t[k])
            row = (1.0 - w) * self.values[k] + w * self.values[k + 1]
        return np.interp(np.asarray(s, dtype=float), self.s, row, period=self.period)


def _component_index(label: str) -> int:
    label = label.strip().lower()
    if label in ("0", "outer"):
        return 0
    if label in ("1", "inner"):
        return 1
    raise ValidationError([f"unknown component label {label!r}"])


def load_table(path, geom: DomainGeometry):
    """Read a CSV table with columns component, s, t, a, alpha, b.

    Every component must be sampled on a full ``s x t`` tensor grid. Values
    are interpolated periodically-linearly in ``s`` and linearly in ``t``
    (held constant outside the tabulated time range).
    """
    rows = {0: [], 1: []}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"component", "s", "t", "a", "alpha", "b"}
        if reader.fieldnames is None or not need.issubset(reader.fieldnames):
            raise ValidationError([f"table {path} must have columns {sorted(need)}"])
        for rec in reader:
            k = _component_index(rec["component"])
            rows[k].append([float(rec[c]) for c in ("s", "t", "a", "alpha", "b")])
    tables = {}
    for k, comp in enumerate(geom.components):
        arr = np.array(rows[k])
        if arr.size == 0:
            raise ValidationError([f"table {path} has no rows for the {comp.name} circle"])
        s_u = np.unique(arr[:, 0])
        t_u = np.unique(arr[:, 1])
        if s_u.size * t_u.size != arr.shape[0]:
            raise ValidationError([f"{comp.name} rows do not form a full s x t grid"])
        si = np.searchsorted(s_u, arr[:, 0])
        ti = np.searchsorted(t_u, arr[:, 1])
        per = {}
        for col, key in ((2, "a"), (3, "alpha"), (4, "b")):
            vals = np.empty((t_u.size, s_u.size))
            vals[ti, si] = arr[:, col]
            per[key] = _Table(s_u, t_u, vals, comp.total_length)
        tables[k] = per
    return tables


def custom_table(geom: DomainGeometry, path: str = "", omega0: float = 0.0):
    """Per-node boundary data read from a CSV table; uniform initial vorticity."""
    if not path:
        raise ValidationError(["custom_table needs a 'path' parameter"])
    if not Path(path).is_file():
        raise ValidationError([f"table file {path} not found"])
    tables = load_table(path, geom)

    def pick(key):
        def fn(comp, s, t):
            k = 0 if comp.orientation > 0 else 1
            return tables[k][key](comp, s, t)

        return fn

    def w0(x, y):
        return np.full(np.broadcast(x, y).shape, float(omega0))

    return BoundaryData(
        a=pick("a"), alpha=pick("alpha"), b=pick("b"), omega0=w0, name="custom_table",
        through_flow=True,
    )


REGISTRY = {
    "custom_table": (custom_table, "per-node boundary data from a CSV table (component, s, t, a, alpha, b)"),
    "shear_inflow": (shear_inflow, "a = a0 cos(s) on the outer circle, gamma and g nonzero on the inflow arc"),
    "solid_rotation": (solid_rotation, "rigid rotation omega = c, impermeable walls, alpha = 2k, b = c"),
    "uniform_throughflow": (uniform_throughflow, "uniform stream v = (eps, 0), gamma = 0, g = 0, omega0 = 0"),
    "zero": (zero, "no flow, no forcing, zero initial vorticity"),
}


def list_scenarios():
    """``(name, description)`` pairs in alphabetical order."""
    return [(name, REGISTRY[name][1]) for name in sorted(REGISTRY)]


def make_scenario(name: str, geom: DomainGeometry, **params) -> BoundaryData:
    if name not in REGISTRY:
        raise ValidationError([f"unknown scenario {name!r}"])
    try:
        return REGISTRY[name][0](geom, **params)
    except TypeError as exc:
        raise ValidationError([f"bad parameters for scenario {name!r}: {exc}"]) from exc


@dataclass
class Problem:
    """Everything a march needs: grid, raw and reduced data, initial field."""

    geom: DomainGeometry
    grid: Grid
    data: BoundaryData
    reduced: object
    omega0: np.ndarray


def build_problem(
    scenario: str,
    n_r: int,
    n_s: int | None = None,
    kind: str = "annulus",
    r_inner: float | None = 0.5,
    r_outer: float = 1.0,
    theta: float = 0.0,
    T: float = 1.0,
    scenario_params: dict | None = None,
    derivative: str = "spectral",
    smooth_s: bool = False,
    smooth_t: bool = False,
) -> Problem:
    """Geometry, grid, reduced data and initial vorticity from plain values.

    ``n_s`` defaults to ``2 n_r``. With ``theta > 0`` the data and the
    initial vorticity are mollified.
    """
    geom = DomainGeometry(kind=kind, r_inner=r_inner, r_outer=r_outer, n_s=n_s or 2 * n_r)
    grid = Grid(geom, n_r)
    data = make_scenario(scenario, geom, **(scenario_params or {}))
    reduced = reduce_boundary_data(data, geom, derivative=derivative)
    omega0 = sample_omega0(data, grid)
    if theta > 0:
        reduced, omega0 = mollify_data(reduced, omega0, theta, grid, T=T, smooth_s=smooth_s, smooth_t=smooth_t)
    return Problem(geom, grid, data, reduced, omega0)
