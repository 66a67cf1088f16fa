"""Numerical checks of the a priori estimates along a computed trajectory.

Checks that need every time level (space-time integrals) are implemented as
*observers*: objects with a ``level(level)`` method that
:func:`navslip.transport.march_coupled` calls at each level, so nothing
large has to be stored. :func:`replay` feeds a densely stored trajectory
through the same observers after the fact.

Boundary budget terms are computed from the per-step face logs of the
trajectory, so they can be evaluated for any exponent ``p`` afterwards.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from .boundary_data import arc_derivative, smoothstep
from .elliptic import Grid, discrete_norm, lp_integral, solve_stream, velocity_from_stream
from .errors import HypothesisFailed
from .geometry import signed_distance
from .transport import (
    ExtensionField,
    Level,
    Trajectory,
    boundary_vorticity,
    cutoff,
)

MAX_PRINCIPLE_TOL = 1e-8

REPORT_COLUMNS = [
    "check_name", "t0", "p", "nu", "theta", "sigma", "grid", "lhs", "rhs", "slack", "pass",
]


@dataclass
class EstimateRecord:
    check_name: str
    lhs: float
    rhs: float
    passed: bool
    t0: float = float("nan")
    p: float = float("nan")
    nu: float = float("nan")
    theta: float = float("nan")
    sigma: float = float("nan")
    grid: str = ""

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    def row(self):
        d = asdict(self)
        return {
            "check_name": d["check_name"],
            "t0": _fmt(d["t0"]),
            "p": _fmt(d["p"]),
            "nu": _fmt(d["nu"]),
            "theta": _fmt(d["theta"]),
            "sigma": _fmt(d["sigma"]),
            "grid": d["grid"],
            "lhs": _fmt(d["lhs"]),
            "rhs": _fmt(d["rhs"]),
            "slack": _fmt(self.slack),
            "pass": int(bool(d["passed"])),
        }


def _fmt(x):
    return repr(float(x))


@dataclass
class EstimateReport:
    """Ordered collection of check records."""

    records: list = field(default_factory=list)

    def add(self, record: EstimateRecord):
        self.records.append(record)
        return record

    def extend(self, other: "EstimateReport | Iterable[EstimateRecord]"):
        recs = other.records if isinstance(other, EstimateReport) else list(other)
        self.records.extend(recs)
        return self

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records)

    def first_failure(self):
        for r in self.records:
            if not r.passed:
                return r
        return None

    def by_name(self, name: str):
        return [r for r in self.records if r.check_name == name]

    def min_slack(self, name: str | None = None) -> float:
        recs = self.records if name is None else self.by_name(name)
        return min(r.slack for r in recs) if recs else float("inf")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
            writer.writeheader()
            for r in self.records:
                writer.writerow(r.row())

    def __len__(self):
        return len(self.records)


def _meta(traj: Trajectory):
    return {"nu": traj.params.nu, "theta": traj.reduced.theta, "grid": traj.grid.label}


# ---------------------------------------------------------------------------
# test functions


def _bump(q):
    """``(1 - q^2)^3`` on ``|q| < 1``, zero outside; value and derivative."""
    q = np.asarray(q, dtype=float)
    inside = np.abs(q) < 1
    one = np.where(inside, 1 - q * q, 0.0)
    return one**3, -6 * q * one**2, np.where(inside, -6 * one**2 + 24 * q * q * one, 0.0)


def _taper(t, T, sigma_bar):
    """1 up to ``T - 2 sigma_bar``, smooth descent to 0 at ``T - sigma_bar``."""
    x = (np.asarray(t, dtype=float) - (T - 2 * sigma_bar)) / sigma_bar
    xc = np.clip(x, 0, 1)
    return 1 - smoothstep(x), np.where((x > 0) & (x < 1), -6 * xc * (1 - xc) / sigma_bar, 0.0)


class TestFunction:
    """Separable ``psi(x, y, t) = phi(x, y) tau(t)`` in closed form.

    Subclasses implement :meth:`space` (value, gradient and Laplacian of
    ``phi``) and :meth:`time` (``tau`` and ``tau'``). ``sigma_bar`` is the
    declared margin: ``psi`` vanishes within distance ``sigma_bar`` of the
    outflow and impermeable boundary and for ``t >= T - sigma_bar``.
    """

    __test__ = False  # not a pytest class
    name = "test_function"
    sigma_bar = 0.0

    def space(self, x, y):
        """``(phi, phi_x, phi_y, lap phi)``."""
        raise NotImplementedError

    def time(self, t):
        """``(tau, tau')``."""
        raise NotImplementedError

    def value(self, x, y, t):
        return self.space(x, y)[0] * self.time(t)[0]

    def grad(self, x, y, t):
        _, gx, gy, _ = self.space(x, y)
        tau = self.time(t)[0]
        return gx * tau, gy * tau

    def laplacian(self, x, y, t):
        return self.space(x, y)[3] * self.time(t)[0]

    def dt(self, x, y, t):
        return self.space(x, y)[0] * self.time(t)[1]

    def check_support(self, geom, labels, T, n_probe: int = 9) -> bool:
        """Sample the forbidden region and confirm ``psi = 0`` there.

        ``labels`` are the per-component node labels from
        :func:`navslip.geometry.boundary_partition`.
        """
        from .geometry import INFLOW

        tt = np.linspace(0, T, 17)
        for comp, lab in zip(geom.components, labels):
            bad = lab != INFLOW
            th = comp.angles[bad]
            if th.size == 0:
                continue
            for frac in np.linspace(0, 1, n_probe):
                r = comp.radius - comp.orientation * frac * self.sigma_bar
                for dth in np.linspace(-1, 1, n_probe) * self.sigma_bar / comp.radius:
                    x = r * np.cos(th + dth)
                    y = r * np.sin(th + dth)
                    for t in tt:
                        if np.any(self.value(x, y, t) != 0):
                            return False
        pts = np.linspace(0, 2 * np.pi, 64)
        r = np.linspace(geom.r_inner, geom.r_outer, 16)
        R, TH = np.meshgrid(r, pts)
        for t in np.linspace(T - self.sigma_bar, T, 5):
            if np.any(self.value(R * np.cos(TH), R * np.sin(TH), t) != 0):
                return False
        return True


class _Tapered(TestFunction):
    T = 1.0

    def time(self, t):
        return _taper(t, self.T, self.sigma_bar)


class InteriorBump(_Tapered):
    """Radial bump ``(1 - |x - c|^2/rho^2)^3`` times an end-of-horizon taper."""

    name = "interior_bump"

    def __init__(self, center=(0.0, 0.75), radius=0.2, T=1.0, sigma_bar=0.05):
        self.cx, self.cy = map(float, center)
        self.rho = float(radius)
        self.T = float(T)
        self.sigma_bar = float(sigma_bar)

    def space(self, x, y):
        dx = np.asarray(x) - self.cx
        dy = np.asarray(y) - self.cy
        q2 = (dx * dx + dy * dy) / self.rho**2
        inside = q2 < 1
        one = np.where(inside, 1 - q2, 0.0)
        phi = one**3
        coef = -6 * one**2 / self.rho**2
        # lap of (1-q2)^3 in 2D: 24 q2 (1-q2)/rho^2 - 12 (1-q2)^2/rho^2
        lap = np.where(inside, (24 * q2 * one - 12 * one**2) / self.rho**2, 0.0)
        return phi, coef * dx, coef * dy, lap


class InflowCollar(_Tapered):
    """Bump hugging an arc of the outer circle, flat in the normal direction at the wall.

    ``psi = eta(r) w(theta) tau(t)`` with ``eta = (1 - ((r1 - r)/width)^2)^3``
    and ``w = (1 - ((theta - theta_c)/half_angle)^2)^3``.
    """

    name = "inflow_collar"

    def __init__(self, r_outer=1.0, width=0.2, theta_c=np.pi, half_angle=1.0, T=1.0, sigma_bar=0.05):
        self.r1 = float(r_outer)
        self.width = float(width)
        self.theta_c = float(theta_c)
        self.half = float(half_angle)
        self.T = float(T)
        self.sigma_bar = float(sigma_bar)

    def space(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        r = np.hypot(x, y)
        th = np.arctan2(y, x)
        dth = np.angle(np.exp(1j * (th - self.theta_c)))
        qr = np.where(r <= self.r1, (self.r1 - r) / self.width, 2.0)
        eta, deta_q, d2eta_q = _bump(qr)
        w, dw_u, d2w_u = _bump(dth / self.half)
        eta_r = -deta_q / self.width
        eta_rr = d2eta_q / self.width**2
        w_t = dw_u / self.half
        w_tt = d2w_u / self.half**2
        rs = np.maximum(r, 1e-300)
        d_r = eta_r * w
        d_th = eta * w_t / rs
        gx = d_r * np.cos(th) - d_th * np.sin(th)
        gy = d_r * np.sin(th) + d_th * np.cos(th)
        lap = eta_rr * w + eta_r * w / rs + eta * w_tt / rs**2
        return eta * w, gx, gy, lap


class SpaceTimeBump(TestFunction):
    """Interior spatial bump times a compact bump in time centred at ``t_c``."""

    name = "space_time_bump"

    def __init__(self, center=(0.0, -0.75), radius=0.2, t_c=0.5, t_half=0.4, T=1.0):
        self._bump = InteriorBump(center, radius, T=np.inf, sigma_bar=0.0)
        self.t_c = float(t_c)
        self.t_half = float(t_half)
        self.T = float(T)
        self.sigma_bar = max(0.0, self.T - (self.t_c + self.t_half))

    def space(self, x, y):
        return self._bump.space(x, y)

    def time(self, t):
        b, db, _ = _bump((np.asarray(t, dtype=float) - self.t_c) / self.t_half)
        return b, db / self.t_half


def builtin_test_functions(geom, T: float):
    """The three built-in families, sized for the annulus of ``geom``.

    Supports keep the declared margin ``sigma_bar`` away from the
    impermeable inner circle and the outflow arc.
    """
    gap = geom.r_outer - geom.r_inner
    mid = 0.5 * (geom.r_inner + geom.r_outer)
    sb = min(0.05, 0.1 * T)
    return [
        InteriorBump((-mid, 0.0), 0.35 * gap, T, sb),
        InflowCollar(geom.r_outer, 0.8 * gap, np.pi, 1.0, T, sb),
        SpaceTimeBump((0.0, -mid), 0.28 * gap, 0.5 * T, 0.4 * T, T),
    ]


# ---------------------------------------------------------------------------
# observers


def _trapz_levels(times, values):
    return float(trapezoid(np.asarray(values, dtype=float), np.asarray(times, dtype=float)))


def _cell_space(psi: TestFunction, grid: Grid):
    """``psi.space`` on cell centres, computed once per grid."""
    cache = psi.__dict__.setdefault("_grid_cache", {})
    key = (id(grid), "cells")
    if key not in cache:
        cache[key] = psi.space(grid.xc, grid.yc)
    return cache[key]


def _face_space(psi: TestFunction, grid: Grid):
    """``(phi, d phi / dn)`` at the outer and inner boundary face mid-points.

    ``n`` is the outward normal.
    """
    cache = psi.__dict__.setdefault("_grid_cache", {})
    key = (id(grid), "faces")
    if key not in cache:
        th = grid.thc
        c, s = np.cos(th), np.sin(th)
        out = []
        for r, sign in ((grid.r[-1], 1.0), (grid.r[0], -1.0)):
            phi, gx, gy, _ = psi.space(r * c, r * s)
            out.append((phi, sign * (gx * c + gy * s)))
        cache[key] = tuple(out)
    return cache[key]


class WeakFormObserver:
    """Accumulates the space-time terms of the transport weak form.

    Per level it records ``int omega (psi_t + v . grad psi)``, the inflow
    boundary term ``int_{inflow} a omega_Gamma psi`` and the viscous term
    ``int omega lap psi``.
    """

    def __init__(self, psi: TestFunction, grid: Grid):
        self.psi = psi
        self.grid = grid
        self.times, self.bulk, self.boundary, self.viscous = [], [], [], []
        self.initial = 0.0

    def level(self, lv: Level):
        g = self.grid
        phi, gx, gy, lap = _cell_space(self.psi, g)
        tau, dtau = (float(x) for x in self.psi.time(lv.t))
        self.times.append(lv.t)
        if tau == 0.0 and dtau == 0.0:
            self.bulk.append(0.0)
            self.viscous.append(0.0)
            self.boundary.append(0.0)
        else:
            vx, vy = lv.v.cell_cartesian()
            w = g.cell_area * lv.omega
            self.bulk.append(float(np.sum(w * (dtau * phi + tau * (vx * gx + vy * gy)))))
            self.viscous.append(tau * float(np.sum(w * lap)))
            bnd = 0.0
            fluxes = (lv.v.flux_r[-1], -lv.v.flux_r[0])
            for k, (pv, _) in enumerate(_face_space(self.psi, g)):
                face = 0.5 * (lv.omega_gamma[k] + np.roll(lv.omega_gamma[k], -1))
                F = fluxes[k]
                bnd += tau * float(np.sum(np.where(F < 0, F * face * pv, 0.0)))
            self.boundary.append(bnd)
        if lv.n == 0:
            tau0 = float(self.psi.time(0.0)[0])
            self.initial = tau0 * float(np.sum(g.cell_area * lv.omega * phi))

    def residual(self, nu: float = 0.0, steps=None) -> float:
        """``|LHS - RHS|`` of the weak form.

        ``nu > 0`` adds ``nu int int omega lap psi`` to the LHS. With the
        step logs of the run, the wall term
        ``-nu int int_Gamma (psi d omega/dn - omega d psi/dn)`` is added to
        the RHS as well, giving the full weak form of the viscous problem.
        """
        lhs = _trapz_levels(self.times, self.bulk) + self.initial
        rhs = _trapz_levels(self.times, self.boundary)
        if nu:
            lhs += nu * _trapz_levels(self.times, self.viscous)
            if steps is not None:
                rhs -= self.wall_term(nu, steps)
        return abs(lhs - rhs)

    def wall_term(self, nu: float, steps) -> float:
        """``nu int int_Gamma (psi d omega/dn - omega d psi/dn)`` from step logs."""
        g = self.grid
        faces = _face_space(self.psi, g)
        total = 0.0
        for n, log in enumerate(steps):
            tau = 0.5 * float(self.psi.time(self.times[n])[0] + self.psi.time(self.times[n + 1])[0])
            if tau == 0.0:
                continue
            for k, (pv, dpv) in enumerate(faces):
                arc = g.r[-1] * g.dtheta if k == 0 else g.r[0] * g.dtheta
                total += log.dt * tau * float(
                    np.sum(pv * log.diffusive[k] - nu * log.ghost[k] * dpv * arc)
                )
        return total

    def viscous_term(self, nu: float) -> float:
        return nu * _trapz_levels(self.times, self.viscous)


def _breve_for(ext: ExtensionField, lv: Level):
    return ext.cells(lv.t, lv.omega_gamma)


class StripFluxObserver:
    """Boundary-strip flux functional for several strip widths at once.

    Per level and width ``sigma``:
    ``(1/sigma) int_{sigma < d < 2 sigma} |omega - breve|^p (v . grad d) psi``.
    Only the rings that meet some strip are evaluated.

    :meth:`floor` is the same integrand over the wall-adjacent cell ring
    divided by its width: the trace mismatch that the discretization leaves
    at the wall, which vanishes for the exact solution.
    """

    def __init__(self, psi: TestFunction, grid: Grid, sigmas: Sequence[float], p: float, extension: ExtensionField):
        self.psi = psi
        self.grid = grid
        self.sigmas = [float(s) for s in sigmas]
        self.p = float(p)
        self.ext = extension
        pts = np.stack([grid.xc, grid.yc], axis=-1)
        self.d = signed_distance(grid.geom, pts)
        mid = 0.5 * (grid.geom.r_inner + grid.geom.r_outer)
        # grad d = -e_r near the outer circle, +e_r near the inner one
        self.sign = np.where(grid.rc[:, None] >= mid, -1.0, 1.0) * np.ones(grid.shape)
        hi = 2.0 * max(self.sigmas) if self.sigmas else 0.0
        lo = min(self.sigmas) if self.sigmas else 0.0
        self.wall = self.d < grid.dr
        self.rows = np.flatnonzero(np.any(((self.d > lo) & (self.d < hi)) | self.wall, axis=1))
        self.times = []
        self.values = {s: [] for s in self.sigmas}
        self.wall_values = []

    def level(self, lv: Level):
        g = self.grid
        rows = self.rows
        tau = float(self.psi.time(lv.t)[0])
        self.times.append(lv.t)
        if tau == 0.0 or rows.size == 0:
            for s in self.sigmas:
                self.values[s].append(0.0)
            self.wall_values.append(0.0)
            return
        ext = self.ext
        proj = ext.projected(lv.omega_gamma)[rows]
        breve = ext.chi[rows] * proj + (1 - ext.chi[rows]) * ext.rho(lv.t) * ext.omega0[rows]
        vr, _ = lv.v.cell_polar()
        psi = tau * _cell_space(self.psi, g)[0][rows]
        w = g.cell_area[rows] * np.abs(lv.omega[rows] - breve) ** self.p * vr[rows] * self.sign[rows] * psi
        d = self.d[rows]
        for s in self.sigmas:
            self.values[s].append(float(np.sum(w[(d > s) & (d < 2 * s)])) / s)
        self.wall_values.append(float(np.sum(w[self.wall[rows]])) / g.dr)

    def functional(self, sigma: float) -> float:
        return _trapz_levels(self.times, self.values[float(sigma)])

    def floor(self) -> float:
        return _trapz_levels(self.times, self.wall_values)


class TimeStripObserver:
    """Records ``int |omega - breve|^p psi dx`` per level for the initial-strip functional.

    Levels after ``t_stop`` are skipped (the functional only needs the
    initial strip).
    """

    def __init__(self, psi: TestFunction, grid: Grid, p: float, extension: ExtensionField, t_stop: float = np.inf):
        self.psi = psi
        self.grid = grid
        self.p = float(p)
        self.ext = extension
        self.t_stop = float(t_stop)
        self.times, self.values = [], []

    def level(self, lv: Level):
        if lv.t > self.t_stop and self.times and self.times[-1] >= self.t_stop:
            return
        g = self.grid
        breve = _breve_for(self.ext, lv)
        psi = float(self.psi.time(lv.t)[0]) * _cell_space(self.psi, g)[0]
        self.times.append(lv.t)
        self.values.append(float(np.sum(g.cell_area * np.abs(lv.omega - breve) ** self.p * psi)))

    def functional(self, sigma: float) -> float:
        return time_strip_functional(self.times, self.values, sigma)


class ExtensionObserver:
    """Builds the extension field's boundary history as the run proceeds."""

    def __init__(self, extension: ExtensionField):
        self.ext = extension

    def level(self, lv: Level):
        self.ext.append(lv.t, np.stack(lv.omega_gamma))


def replay(trajectory: Trajectory, observers: Sequence):
    """Feed a densely stored ``march_coupled`` trajectory through observers."""
    if not trajectory.is_dense():
        raise ValueError("replay needs a snapshot at every level")
    g = trajectory.grid
    R = trajectory.params.cutoff_level
    for n, (t, omega) in enumerate(zip(trajectory.times, trajectory.snapshots)):
        snap = trajectory.reduced.at(t)
        h = solve_stream(cutoff(omega, R), snap.A[0], snap.A[1], g)
        v = velocity_from_stream(h, g)
        lv = Level(n, t, omega, v, boundary_vorticity(v, snap), snap)
        for obs in observers:
            obs.level(lv)
    return observers


# ---------------------------------------------------------------------------
# functionals


def strip_flux_functional(omega, omega_breve, v_dot_grad_d, grid: Grid, sigma, p, psi, d=None):
    """Spatial strip integrand at one time level.

    ``(1/sigma) sum_{sigma < d < 2 sigma} |omega - breve|^p (v . grad d) psi area``.
    ``v_dot_grad_d`` and ``psi`` are cell arrays.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if d is None:
        d = signed_distance(grid.geom, np.stack([grid.xc, grid.yc], axis=-1))
    band = (d > sigma) & (d < 2 * sigma)
    diff = np.abs(np.asarray(omega) - np.asarray(omega_breve)) ** p
    return float(np.sum(np.where(band, diff * v_dot_grad_d * psi * grid.cell_area, 0.0))) / sigma


def time_strip_functional(times, values, sigma) -> float:
    """``(1/sigma) int_0^sigma values(t) dt`` with linear interpolation at ``sigma``."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if sigma <= 0 or sigma > times[-1] + 1e-12:
        raise ValueError("sigma must lie in (0, T]")
    cum = cumulative_trapezoid(values, times, initial=0.0)
    return float(np.interp(sigma, times, cum)) / sigma


def weak_form_residual(trajectory: Trajectory, psi: TestFunction, nu: float = 0.0) -> float:
    """Weak-form residual of a densely stored trajectory (see :class:`WeakFormObserver`)."""
    obs = WeakFormObserver(psi, trajectory.grid)
    replay(trajectory, [obs])
    return obs.residual(nu)


# ---------------------------------------------------------------------------
# maximum principle and L_p budgets


def max_principle_check(trajectory: Trajectory, tol: float = MAX_PRINCIPLE_TOL) -> EstimateReport:
    """``max|omega| <= max(max|omega0|, |gamma|_inf max|v.s| + |g|_inf)`` at every level.

    The boundary quantities are running maxima over the levels up to ``t``.
    """
    rep = EstimateReport()
    w0 = float(np.max(np.abs(trajectory.omega0)))
    sup_gamma = sup_vs = sup_g = 0.0
    meta = _meta(trajectory)
    for st in trajectory.level_stats:
        sup_gamma = max(sup_gamma, st["max_gamma"])
        sup_vs = max(sup_vs, st["max_vs"])
        sup_g = max(sup_g, st["max_g"])
        rhs = max(w0, sup_gamma * sup_vs + sup_g)
        lhs = st["max_omega"]
        rep.add(EstimateRecord("max_principle", lhs, rhs, lhs <= rhs + tol, t0=st["t"], **meta))
    return rep


@dataclass
class BudgetTerms:
    """Cumulative boundary terms of the ``L_p`` balance at every level.

    ``influx`` is ``-int int_{inflow} a |omega_Gamma|^p`` (nonnegative);
    ``gamma_minus`` is the same term with the sign convention ``a < 0``
    (nonpositive); ``outflux`` is ``int int_{outflow} a |omega|^p`` with the
    upwind trace; ``viscous`` is the net ``|omega|^p`` carried into the
    domain by the viscous wall flux.
    """

    times: np.ndarray
    influx: np.ndarray
    outflux: np.ndarray
    viscous: np.ndarray

    @property
    def gamma_minus(self):
        return -self.influx


def budget_terms(trajectory: Trajectory, p: float) -> BudgetTerms:
    n = len(trajectory.steps)
    inf = np.zeros(n + 1)
    out = np.zeros(n + 1)
    vis = np.zeros(n + 1)
    for k, log in enumerate(trajectory.steps):
        F = log.flux
        inflow = F < 0
        i_k = float(np.sum(np.where(inflow, -F * np.abs(log.ghost) ** p, 0.0)))
        o_k = float(np.sum(np.where(~inflow, F * np.abs(log.upwind) ** p, 0.0)))
        w = log.wall_new
        v_k = float(np.sum(log.diffusive * p * np.abs(w) ** (p - 2) * w))
        inf[k + 1] = inf[k] + log.dt * i_k
        out[k + 1] = out[k] + log.dt * o_k
        vis[k + 1] = vis[k] + log.dt * v_k
    return BudgetTerms(np.asarray(trajectory.times), inf, out, vis)


def lp_budget(
    trajectory: Trajectory,
    p: float = 4.0,
    t0: float | None = None,
    include_outflux: bool = False,
    eps_disc: float = 0.0,
) -> EstimateReport:
    """``L_p`` vorticity budget at stored times (or only at ``t0``).

    Inequality mode: ``int |omega(t0)|^p <= int |omega0|^p + influx(t0) +
    eps_disc``, up to a relative roundoff of ``1e-12``. Equality mode (``include_outflux``) records the relative
    imbalance ``|LHS - RHS| / RHS`` with ``LHS = int |omega(t0)|^p +
    outflux - viscous``; its ``lhs`` field is the imbalance and ``rhs`` is 0.
    """
    g = trajectory.grid
    terms = budget_terms(trajectory, p)
    y0 = lp_integral(trajectory.omega0, g, p)
    rep = EstimateReport()
    meta = _meta(trajectory)
    for idx, snap in zip(trajectory.stored_index, trajectory.snapshots):
        t = trajectory.times[idx]
        if t0 is not None and abs(t - t0) > 1e-12 * max(1.0, abs(t0)):
            continue
        y = lp_integral(snap, g, p)
        rhs = y0 + terms.influx[idx]
        if include_outflux:
            lhs_eq = y + terms.outflux[idx] - terms.viscous[idx]
            imb = abs(lhs_eq - rhs) / rhs if rhs > 0 else abs(lhs_eq - rhs)
            rep.add(EstimateRecord("lp_equality", imb, 0.0, True, t0=t, p=p, **meta))
        else:
            ok = y <= (rhs + eps_disc) * (1 + 1e-12)
            rep.add(EstimateRecord("lp_budget", y, rhs + eps_disc, ok, t0=t, p=p, **meta))
    return rep


def richardson_slack(times_fine, y_fine, times_coarse, y_coarse, order: float = 2.0):
    """Per-level discretization slack ``|y_h - y_2h| / (2^order - 1)``.

    ``y_coarse`` (grid ``2h``) is interpolated linearly onto ``times_fine``.
    """
    if order <= 0:
        raise ValueError("order must be positive")
    times_fine = np.asarray(times_fine, dtype=float)
    coarse = np.interp(times_fine, np.asarray(times_coarse, dtype=float), np.asarray(y_coarse, dtype=float))
    return np.abs(np.asarray(y_fine, dtype=float) - coarse) / (2.0**order - 1.0)


def lp_equality_imbalance(trajectory: Trajectory, p: float = 4.0, t0: float | None = None) -> float:
    """Relative imbalance of the flux equality at ``t0`` (default: final time)."""
    t0 = trajectory.T if t0 is None else t0
    rec = lp_budget(trajectory, p, t0, include_outflux=True).records
    return rec[-1].lhs


# ---------------------------------------------------------------------------
# Gronwall-type lemma


@dataclass
class GronwallResult:
    times: np.ndarray
    y: np.ndarray
    bound: np.ndarray
    hypothesis_slack: np.ndarray
    checked: np.ndarray  # mask of times where both inequalities were evaluated

    @property
    def passed(self) -> bool:
        return bool(np.all(self.y[self.checked] <= self.bound[self.checked] * (1 + 1e-12)))

    @property
    def min_ratio_slack(self) -> float:
        c = self.checked
        return float(np.min(self.bound[c] - self.y[c]))


def forward_window(times, y, theta):
    """``u(t) = (1/theta) int_t^{t+theta} y`` with ``y = 0`` beyond the last time."""
    times = np.asarray(times, dtype=float)
    y = np.asarray(y, dtype=float)
    if theta == 0:
        return y.copy()
    cum = cumulative_trapezoid(y, times, initial=0.0)
    end = times + theta
    upper = np.interp(np.minimum(end, times[-1]), times, cum)
    return (upper - cum) / theta


def discrete_gronwall_bound(times, y, D, B, theta: float, check_until: float | None = None, rtol: float = 1e-10):
    """Check the integral hypothesis and the doubled-exponential conclusion.

    Hypothesis: ``y(t) <= y(0) + int_0^t (D u + B)`` with ``u`` the forward
    window average of ``y`` (zero beyond the last sample).
    Conclusion: ``y(t) <= 2 exp(int_0^t D) [y(0) + int_0^t B exp(-int_0^r D) dr]``.
    Both are evaluated by the trapezoid rule on ``times`` up to
    ``check_until`` (default: all times).

    Raises
    ------
    HypothesisFailed
        If the hypothesis is violated at any checked time; the conclusion
        is then not asserted.
    """
    times = np.asarray(times, dtype=float)
    y = np.asarray(y, dtype=float)
    D = np.broadcast_to(np.asarray(D, dtype=float), times.shape)
    B = np.broadcast_to(np.asarray(B, dtype=float), times.shape)
    if np.any(y < 0) or np.any(D < 0) or np.any(B < 0):
        raise ValueError("y, D and B must be nonnegative")
    u = forward_window(times, y, theta)
    rhs_h = y[0] + cumulative_trapezoid(D * u + B, times, initial=0.0)
    limit = times[-1] if check_until is None else check_until
    checked = times <= limit + 1e-12 * max(1.0, abs(limit))
    slack = rhs_h - y
    scale = np.maximum(np.abs(rhs_h), 1e-300)
    bad = checked & (slack < -rtol * scale)
    if np.any(bad):
        first = float(times[np.argmax(bad)])
        raise HypothesisFailed(f"hypothesis violated first at t = {first:.6g}", first_violation=first)
    ID = cumulative_trapezoid(D, times, initial=0.0)
    inner = cumulative_trapezoid(B * np.exp(-ID), times, initial=0.0)
    bound = 2 * np.exp(ID) * (y[0] + inner)
    return GronwallResult(times, y, bound, slack, checked)


def _w2p_boundary_norm(A_components, geom, p):
    """``(int_Gamma |A|^p + |A'|^p + |A''|^p ds)^{1/p}`` with spectral derivatives."""
    total = 0.0
    for comp, A in zip(geom.components, A_components):
        ds = abs(comp.ds)
        d1 = arc_derivative(A, comp.ds, "spectral")
        d2 = arc_derivative(d1, comp.ds, "spectral")
        total += ds * float(np.sum(np.abs(A) ** p + np.abs(d1) ** p + np.abs(d2) ** p))
    return total ** (1.0 / p)


def solver_gronwall_check(trajectory: Trajectory, p: float = 4.0) -> tuple[EstimateReport, GronwallResult]:
    """Apply the Gronwall-type lemma to ``y(t) = ||omega(t)||_p^p`` of a run.

    The window is the identity (``theta = 0``, so ``u = y``); this is the
    window the march actually uses. ``D`` and ``B`` follow the coefficient
    form ``D = C_p |a|_inf int_{inflow} |gamma|^p`` and ``B = C_p |a|_inf
    (|A|^p int_{inflow} |gamma|^p + int_{inflow} |g|^p)``, with the velocity
    constant ``C_v = sup |v|_inf^p / (||omega||_p^p + ||A||^p)`` measured on
    the run and ``C_p = 2^{p-1} max(1, C_v)``.
    Requires a densely stored trajectory.
    """
    if not trajectory.is_dense():
        raise ValueError("needs a snapshot at every level")
    g = trajectory.grid
    geom = g.geom
    R = trajectory.params.cutoff_level
    times = np.asarray(trajectory.times)
    y = np.array([lp_integral(w, g, p) for w in trajectory.snapshots])
    a_inf = 0.0
    A_norm = 0.0
    gam_p, g_p, vmax = [], [], []
    for t, w in zip(times, trajectory.snapshots):
        snap = trajectory.reduced.at(t)
        h = solve_stream(cutoff(w, R), snap.A[0], snap.A[1], g)
        v = velocity_from_stream(h, g)
        vx, vy = v.cell_cartesian()
        vb = max(float(np.max(np.abs(v.boundary_tangential(k)))) for k in range(2))
        vbn = max(float(np.max(np.abs(snap.a[k]))) for k in range(2))
        vmax.append(max(float(np.max(np.hypot(vx, vy))), math.hypot(vb, vbn)))
        A_norm = max(A_norm, _w2p_boundary_norm(snap.A, geom, p))
        gp = gg = 0.0
        for k, comp in enumerate(geom.components):
            inflow = snap.a[k] < 0
            a_inf = max(a_inf, float(np.max(np.where(inflow, -snap.a[k], 0.0))))
            ds = abs(comp.ds)
            gp += ds * float(np.sum(np.where(inflow, np.abs(snap.gamma[k]) ** p, 0.0)))
            gg += ds * float(np.sum(np.where(inflow, np.abs(snap.g[k]) ** p, 0.0)))
        gam_p.append(gp)
        g_p.append(gg)
    vmax = np.array(vmax)
    denom = y + A_norm**p
    c_v = float(np.max(np.where(denom > 0, vmax**p / np.maximum(denom, 1e-300), 0.0)))
    c_p = 2 ** (p - 1) * max(1.0, c_v)
    D = c_p * a_inf * np.array(gam_p)
    B = c_p * a_inf * (A_norm**p * np.array(gam_p) + np.array(g_p))
    res = discrete_gronwall_bound(times, y, D, B, 0.0)
    rep = EstimateReport()
    meta = _meta(trajectory)
    for t, yy, bb in zip(times, y, res.bound):
        rep.add(EstimateRecord("gronwall_solver", float(yy), float(bb), yy <= bb, t0=float(t), p=p, **meta))
    return rep, res


# ---------------------------------------------------------------------------
# time regularity and the p = infinity passage


def time_lipschitz_check(
    trajectory: Trajectory, p: float = 4.0, delta_steps: Sequence[int] = (2, 4, 8, 16), t_index: int | None = None,
    max_spread: float = 10.0,
) -> EstimateRecord:
    """Ratios ``||grad h1(t + D) - grad h1(t)||_p / D`` over several offsets ``D``.

    ``h1`` is the zero-boundary-data part of the stream function, so the
    difference solves ``-lap = [omega(t+D)]_R - [omega(t)]_R`` with zero
    boundary values. Passes when all ratios are zero or their spread
    ``max/min`` is below ``max_spread``. ``lhs`` holds the spread and ``rhs``
    the allowed spread.
    """
    if not trajectory.is_dense():
        raise ValueError("needs a snapshot at every level")
    g = trajectory.grid
    R = trajectory.params.cutoff_level
    times = trajectory.times
    n = len(times)
    if t_index is None:
        t_index = (n - 1 - max(delta_steps)) // 2
    zero = np.zeros(g.n_s)
    base = cutoff(trajectory.snapshots[t_index], R)
    ratios = []
    for k in delta_steps:
        j = t_index + k
        if j >= n:
            raise ValueError("offset beyond the end of the trajectory")
        diff = cutoff(trajectory.snapshots[j], R) - base
        h = solve_stream(diff, zero, zero, g)
        vx, vy = velocity_from_stream(h, g).cell_cartesian()
        ratios.append(discrete_norm(np.hypot(vx, vy), g, p) / (times[j] - times[t_index]))
    ratios = np.array(ratios)
    if np.all(ratios == 0):
        spread = 1.0
    elif np.any(ratios == 0):
        spread = np.inf
    else:
        spread = float(ratios.max() / ratios.min())
    rec = EstimateRecord("time_lipschitz", spread, max_spread, spread < max_spread, t0=times[t_index], p=p,
                         **_meta(trajectory))
    rec.ratios = ratios
    return rec


def normalized_qnorm(f, grid: Grid, q: float) -> float:
    """``(mean |f|^q)^{1/q}`` over the domain, computed stably for huge ``q``."""
    f = np.abs(np.asarray(f, dtype=float))
    m = float(f.max())
    if m == 0:
        return 0.0
    if np.isinf(q):
        return m
    w = grid.cell_area / np.sum(grid.cell_area)
    with np.errstate(divide="ignore"):
        logs = q * np.log(f / m)
    logs = np.where(f > 0, logs, -np.inf)
    top = np.max(logs)
    s = np.sum(w * np.exp(logs - top))
    return m * math.exp((top + math.log(s)) / q)


def p_infinity_sweep(
    trajectory: Trajectory,
    q_list: Sequence[float] = (4, 8, 16, 32),
    t0: float | None = None,
    q_bar: float = 4.0,
    q_limit: float = 1e9,
    limit_tol: float = 1e-6,
) -> EstimateReport:
    """``q``-sweep of the ``L_q`` budget and the passage to the max norm.

    Records, at ``t0`` (default: final time):

    * ``inf2_budget`` per ``q``: ``||omega(t0)||_q <= ||omega0||_q + influx_q^{1/q}``;
    * ``qnorm_monotone``: normalized ``q``-norms nondecreasing and below the max;
    * ``qnorm_limit``: normalized norm at ``q_limit`` within ``limit_tol`` of the max;
    * ``max_bound``: ``max|omega(t0)| <= max|omega0| + C(q_bar)`` with
      ``C(q_bar) = max(1, int int_{inflow} |a|) (V |gamma|_inf + |g|_inf)``
      and ``V`` the largest velocity seen in the run.
    """
    g = trajectory.grid
    t0 = trajectory.T if t0 is None else t0
    k = int(np.argmin(np.abs(np.asarray(trajectory.stored_times) - t0)))
    idx = trajectory.stored_index[k]
    w = trajectory.snapshots[k]
    meta = _meta(trajectory)
    rep = EstimateReport()
    for q in q_list:
        terms = budget_terms(trajectory, q)
        lhs = discrete_norm(w, g, q)
        rhs = discrete_norm(trajectory.omega0, g, q) + terms.influx[idx] ** (1.0 / q)
        rep.add(EstimateRecord("inf2_budget", lhs, rhs, lhs <= rhs * (1 + 1e-12), t0=trajectory.times[idx], p=q, **meta))
    norms = [normalized_qnorm(w, g, q) for q in q_list]
    mx = float(np.max(np.abs(w)))
    mono = all(b >= a * (1 - 1e-14) for a, b in zip(norms, norms[1:])) and norms[-1] <= mx * (1 + 1e-14)
    rep.add(EstimateRecord("qnorm_monotone", norms[-1], mx, mono, t0=trajectory.times[idx], p=q_list[-1], **meta))
    lim = normalized_qnorm(w, g, q_limit)
    rep.add(EstimateRecord("qnorm_limit", abs(mx - lim), limit_tol, abs(mx - lim) <= limit_tol,
                           t0=trajectory.times[idx], p=q_limit, **meta))
    stats = trajectory.level_stats[: idx + 1]
    flux_in = sum(log.dt * float(np.sum(np.maximum(-log.flux, 0.0))) for log in trajectory.steps[:idx])
    V = max(s["max_vs"] for s in stats)
    c_q = max(1.0, flux_in) * (V * max(s["max_gamma"] for s in stats) + max(s["max_g"] for s in stats))
    rhs = float(np.max(np.abs(trajectory.omega0))) + c_q
    rep.add(EstimateRecord("max_bound", mx, rhs, mx <= rhs, t0=trajectory.times[idx], p=q_bar, **meta))
    return rep


# ---------------------------------------------------------------------------
# viscosity sweep


@dataclass
class SweepMember:
    nu: float
    final: np.ndarray
    report: EstimateReport
    error: str = ""


def _sweep_member(job):
    from .scenarios import build_problem
    from .transport import march_coupled

    problem_kwargs, params, p = job
    try:
        pb = build_problem(**problem_kwargs)
        traj = march_coupled(pb.grid, pb.reduced, pb.omega0, params, store_every=10**9)
    except Exception as exc:  # partial reports are allowed
        return SweepMember(params.nu, None, EstimateReport(), f"{type(exc).__name__}: {exc}")
    rep = EstimateReport()
    if params.nu > 0:
        rep.extend(max_principle_check(traj))
    rep.extend(lp_budget(traj, p, traj.T))
    return SweepMember(params.nu, traj.final, rep)


def viscosity_sweep_report(
    scenario: str,
    nu_list: Sequence[float],
    params,
    problem: dict | None = None,
    p: float = 4.0,
    slack: float = 0.1,
    workers: int = 1,
    floor: float = 1e-10,
):
    """Run a scenario for every ``nu`` in ``nu_list`` plus ``nu = 0``.

    Parameters
    ----------
    scenario : str
        Registry name.
    nu_list : sequence of float
        Decreasing positive viscosities.
    params : SolverParams
        Shared solver parameters; ``nu`` is overridden per run.
    problem : dict
        Keyword arguments for :func:`navslip.scenarios.build_problem` other
        than ``scenario`` (grid size, geometry, ``theta``, scenario
        parameters). ``T`` is taken from ``params``.
    slack : float
        Relative slack for the monotonicity of consecutive differences.
    floor : float
        Differences below this count as zero and always pass.
    workers : int
        Size of the process pool; 1 runs in-process.

    Returns
    -------
    (EstimateReport, dict)
        Records ``nu_consecutive`` (``lhs`` the difference
        ``||omega_i - omega_{i+1}||_L2`` at ``T``, ``rhs`` the previous
        difference times ``1 + slack``), ``nu_to_inviscid`` (distance to
        the ``nu = 0`` run against the previous distance) and every per-run
        check; plus the final fields keyed by ``nu``.
    """
    nus = [float(x) for x in nu_list]
    if any(b >= a for a, b in zip(nus, nus[1:])) or any(x <= 0 for x in nus):
        raise ValueError("nu_list must be positive and strictly decreasing")
    kwargs = dict(problem or {})
    kwargs["scenario"] = scenario
    kwargs["T"] = params.T
    kwargs.setdefault("theta", params.theta)
    jobs = [(kwargs, replace(params, nu=nu), p) for nu in nus + [0.0]]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            members = list(pool.map(_sweep_member, jobs))
    else:
        members = [_sweep_member(j) for j in jobs]
    rep = EstimateReport()
    finals = {}
    for m in members:
        if m.error:
            rep.add(EstimateRecord(f"run_error {m.error}", float("nan"), float("nan"), False, nu=m.nu))
            continue
        finals[m.nu] = m.final
        rep.extend(m.report)
    from .scenarios import build_problem

    grid = build_problem(**kwargs).grid
    theta = float(kwargs["theta"])

    def dist(a, b):
        return discrete_norm(a - b, grid, 2)

    prev = float("inf")
    for a, b in zip(nus, nus[1:]):
        if a in finals and b in finals:
            d = dist(finals[a], finals[b])
            rep.add(EstimateRecord("nu_consecutive", d, prev * (1 + slack), d < prev * (1 + slack) or d <= floor,
                                   nu=b, theta=theta, grid=grid.label))
            prev = d
    prev = float("inf")
    for nu in nus:
        if nu in finals and 0.0 in finals:
            d = dist(finals[nu], finals[0.0])
            rep.add(EstimateRecord("nu_to_inviscid", d, prev, d < prev or d <= floor, nu=nu, theta=theta, grid=grid.label))
            prev = d
    return rep, finals
