"""Vorticity transport: cutoff, window average, the advection-diffusion step,
the coupled march, the Picard slab construction and the extension field.

A run is a sequence of *levels* ``t_0 = 0 < t_1 < ... < t_N = T``. At each
level the stream function is solved from the (clamped or window-averaged)
vorticity, the velocity and the boundary vorticity ``omega_Gamma = gamma
v.s + g`` are formed, and observers are notified. The step from level
``n`` to ``n + 1`` uses the velocity and boundary vorticity of level ``n``:
explicit upwind advection followed by implicit diffusion.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .boundary_data import ReducedData, ReducedSnapshot, smoothstep
from .elliptic import Grid, ModalSolver, VelocityField, discrete_norm, solve_stream, velocity_from_stream
from .errors import BadDelta, CflViolation, MissingHistory, NanDetected, NoConvergence
from .geometry import signed_distance


@dataclass(frozen=True)
class SolverParams:
    """Run parameters.

    ``R = None`` means ``1/theta`` when ``theta > 0`` and no clamping
    otherwise. ``dt = None`` selects the step from the CFL condition, halving
    it whenever the velocity grows; a fixed ``dt`` is checked every step.
    """

    nu: float = 0.0
    R: float | None = None
    theta: float = 0.0
    dt: float | None = None
    T: float = 1.0
    cfl: float = 0.5
    p: float = 4.0
    scheme: str = "upwind"
    store_every: int = 1

    def __post_init__(self):
        if self.nu < 0:
            raise ValueError("nu must be nonnegative")
        if self.theta < 0:
            raise ValueError("theta must be nonnegative")
        if self.R is not None and self.R <= 0:
            raise ValueError("R must be positive")
        if self.T <= 0:
            raise ValueError("T must be positive")
        if not 0 < self.cfl <= 1:
            raise ValueError("cfl must lie in (0, 1]")
        if self.scheme not in ("upwind", "minmod"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.store_every < 1:
            raise ValueError("store_every must be at least 1")

    @property
    def cutoff_level(self) -> float:
        if self.R is not None:
            return float(self.R)
        return 1.0 / self.theta if self.theta > 0 else np.inf


def cutoff(omega, R: float):
    """Pointwise clamp to ``[-R, R]``."""
    if R <= 0:
        raise ValueError("R must be positive")
    if np.isinf(R):
        return np.array(omega, dtype=float, copy=True)
    return np.clip(omega, -R, R)


def window_average(times, fields, t: float, theta: float, R: float, T: float | None = None):
    """Forward window average ``(1/theta) int_t^{t+theta} [omega]_R``.

    ``times``/``fields`` are the stored history (increasing times). The
    field is taken as zero beyond ``T`` (default: the last stored time).
    Values between stored times are linearly interpolated, and the
    integral uses the trapezoid rule on the stored times. ``theta = 0``
    returns the clamped field at ``t``.

    Raises
    ------
    MissingHistory
        If the history does not cover ``[t, min(t + theta, T)]``.
    """
    times = np.asarray(times, dtype=float)
    if T is None:
        T = float(times[-1])
    end = min(t + theta, T)
    tol = 1e-12 * max(1.0, abs(T))
    if t < times[0] - tol or end > times[-1] + tol:
        raise MissingHistory(f"history covers [{times[0]}, {times[-1]}], need [{t}, {end}]")

    def at(tau):
        k = int(np.searchsorted(times, tau - tol, side="left"))
        if k < times.size and abs(times[k] - tau) <= tol:
            return cutoff(fields[k], R)
        k = min(max(k, 1), times.size - 1)
        w = (tau - times[k - 1]) / (times[k] - times[k - 1])
        return (1 - w) * cutoff(fields[k - 1], R) + w * cutoff(fields[k], R)

    if theta == 0:
        return at(t)
    if end <= t:
        return np.zeros_like(np.asarray(fields[0], dtype=float))
    inner = [tau for tau in times if t + tol < tau < end - tol]
    nodes = [t] + inner + [end]
    vals = [at(tau) for tau in nodes]
    acc = np.zeros_like(vals[0])
    for k in range(len(nodes) - 1):
        acc += 0.5 * (nodes[k + 1] - nodes[k]) * (vals[k] + vals[k + 1])
    return acc / theta


def boundary_vorticity(v: VelocityField, snap: ReducedSnapshot):
    """``gamma * v.s + g`` at the boundary nodes, one array per circle."""
    return tuple(snap.gamma[k] * v.boundary_tangential(k) + snap.g[k] for k in range(2))


def _faces_from_nodes(node_vals):
    return 0.5 * (node_vals + np.roll(node_vals, -1))


def _minmod(a, b):
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


@dataclass
class StepLog:
    """Boundary face record of one step (index 0 outer, 1 inner).

    ``flux``: outward volume flux; ``ghost``: boundary vorticity on the
    face; ``wall_old``/``wall_new``: adjacent cell value before and after the
    step; ``upwind``: the value carried by the advective flux.
    """

    dt: float
    flux: np.ndarray
    ghost: np.ndarray
    upwind: np.ndarray
    wall_old: np.ndarray
    wall_new: np.ndarray
    diffusive: np.ndarray  # viscous boundary flux into the domain, per face


class TransportOperator:
    """Conservative advection-diffusion update on a fixed polar grid."""

    def __init__(self, grid: Grid, nu: float, scheme: str = "upwind"):
        self.grid = grid
        self.nu = float(nu)
        self.scheme = scheme
        g = grid
        self.c_bnd = (
            g.r[-1] * g.dtheta / (0.5 * g.dr),
            g.r[0] * g.dtheta / (0.5 * g.dr),
        )
        self._lu = {}
        c_r = g.r[1:-1] * g.dtheta / g.dr
        self._c_lower = np.concatenate([[0.0], c_r])  # face below each cell row
        self._c_upper = np.concatenate([c_r, [0.0]])  # face above each cell row
        self._c_ang = g.dr / (g.rc * g.dtheta)
        self._c_wall = np.zeros(g.n_r)
        self._c_wall[-1] += self.c_bnd[0]
        self._c_wall[0] += self.c_bnd[1]

    def _factor(self, dt):
        """Cached factorization of ``area + dt nu K`` (K: conductance Laplacian)."""
        solver = self._lu.get(dt)
        if solver is None:
            g = self.grid
            k = dt * self.nu
            area = g.cell_area[:, 0]
            diag = area + k * (self._c_lower + self._c_upper + self._c_wall)
            solver = ModalSolver(diag, k * self._c_lower, k * self._c_upper, k * self._c_ang, g.n_s)
            if len(self._lu) > 8:
                self._lu.clear()
            self._lu[dt] = solver
        return solver

    def max_stable_dt(self, v: VelocityField, cfl: float) -> float:
        """Largest ``dt`` with ``dt * outflow / area <= cfl`` in every cell."""
        rate = self.outflow_rate(v)
        m = float(rate.max())
        return np.inf if m <= 0 else cfl / m

    def outflow_rate(self, v: VelocityField):
        fr, ft = v.flux_r, v.flux_t
        out = np.maximum(fr[1:], 0) + np.maximum(-fr[:-1], 0)
        out += np.maximum(np.roll(ft, -1, axis=1), 0) + np.maximum(-ft, 0)
        return out / self.grid.cell_area

    def _advective_flux(self, omega, v, ghost_out, ghost_in, second_order):
        """Face fluxes ``F * omega_upwind`` (radial faces, angular faces)."""
        fr, ft = v.flux_r, v.flux_t
        n_r = omega.shape[0]
        if second_order:
            slope_r = np.zeros_like(omega)
            slope_r[1:-1] = _minmod(omega[2:] - omega[1:-1], omega[1:-1] - omega[:-2])
            slope_t = _minmod(
                np.roll(omega, -1, axis=1) - omega, omega - np.roll(omega, 1, axis=1)
            )
        else:
            slope_r = slope_t = 0.0
        up_lo = omega + 0.5 * slope_r  # value at the upper radial face of each cell
        dn_hi = omega - 0.5 * slope_r  # value at the lower radial face
        below = np.vstack([ghost_in[None, :], up_lo])
        above = np.vstack([dn_hi, ghost_out[None, :]])
        val_r = np.where(fr > 0, below, above)
        left = np.roll(omega + 0.5 * slope_t, 1, axis=1)
        right = omega - 0.5 * slope_t
        val_t = np.where(ft > 0, left, right)
        assert val_r.shape[0] == n_r + 1
        return fr * val_r, ft * val_t, val_r

    def _advect(self, omega, v, ghost_out, ghost_in, dt):
        second = self.scheme == "minmod"

        def rhs(w):
            gr, gt, val_r = self._advective_flux(w, v, ghost_out, ghost_in, second)
            div = gr[1:] - gr[:-1] + np.roll(gt, -1, axis=1) - gt
            return -div / self.grid.cell_area, gr, val_r

        k1, gr, val_r = rhs(omega)
        stage = omega + dt * k1
        if not second:
            return stage, gr, val_r
        k2, gr2, val_r2 = rhs(stage)
        # SSP-RK2; the logged boundary flux is the average of both stages
        return 0.5 * (omega + stage + dt * k2), 0.5 * (gr + gr2), 0.5 * (val_r + val_r2)

    def step(self, omega, v: VelocityField, omega_gamma, dt: float, cfl: float = 1.0):
        """Advance one step.

        Parameters
        ----------
        omega : ndarray (n_r, n_s)
        v : VelocityField
            Velocity of the current level.
        omega_gamma : pair of ndarray (n_s,)
            Boundary vorticity at the nodes of the outer and inner circles.
        dt : float
        cfl : float
            Positivity limit checked against ``dt * outflow / area``.

        Returns
        -------
        (ndarray, StepLog)
        """
        if dt <= 0:
            raise ValueError("dt must be positive")
        limit = self.max_stable_dt(v, cfl)
        if dt > limit * (1 + 1e-12):
            raise CflViolation(f"dt = {dt:.4g} exceeds the advective limit {limit:.4g}")
        g = self.grid
        ghost_out = _faces_from_nodes(np.asarray(omega_gamma[0], dtype=float))
        ghost_in = _faces_from_nodes(np.asarray(omega_gamma[1], dtype=float))
        star, gr, val_r = self._advect(omega, v, ghost_out, ghost_in, dt)
        if self.nu > 0:
            rhs = g.cell_area * star
            rhs[-1] += dt * self.nu * self.c_bnd[0] * ghost_out
            rhs[0] += dt * self.nu * self.c_bnd[1] * ghost_in
            new = self._factor(dt).solve(rhs)
            diff_out = self.nu * self.c_bnd[0] * (ghost_out - new[-1])
            diff_in = self.nu * self.c_bnd[1] * (ghost_in - new[0])
        else:
            new = star
            diff_out = np.zeros(g.n_s)
            diff_in = np.zeros(g.n_s)
        if not np.all(np.isfinite(new)):
            raise NanDetected("non-finite vorticity after step")
        fr = v.flux_r
        log = StepLog(
            dt=dt,
            flux=np.stack([fr[-1], -fr[0]]),
            ghost=np.stack([ghost_out, ghost_in]),
            upwind=np.stack([val_r[-1], val_r[0]]),
            wall_old=np.stack([omega[-1], omega[0]]),
            wall_new=np.stack([new[-1], new[0]]),
            diffusive=np.stack([diff_out, diff_in]),
        )
        return new, log


@dataclass
class TransportState:
    """Vorticity at one time plus a short history for window averaging."""

    omega: np.ndarray
    t: float = 0.0
    history: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)
    history_len: int = 64

    def push(self):
        self.history.append((self.t, self.omega))
        if len(self.history) > self.history_len:
            del self.history[0]


def step_advect_diffuse(
    state: TransportState,
    v: VelocityField,
    params: SolverParams,
    reduced: ReducedData,
    dt: float | None = None,
    operator: TransportOperator | None = None,
) -> TransportState:
    """One advection-diffusion step from ``state`` with a given velocity."""
    grid = v.grid
    op = operator or TransportOperator(grid, params.nu, params.scheme)
    snap = reduced.at(state.t)
    og = boundary_vorticity(v, snap)
    if dt is None:
        dt = params.dt if params.dt else op.max_stable_dt(v, params.cfl)
    new, log = op.step(state.omega, v, og, dt, cfl=1.0)
    out = TransportState(new, state.t + dt, list(state.history), {"log": log}, state.history_len)
    state.push()
    out.history = list(state.history)
    return out


@dataclass
class Level:
    """Everything known at one time level, passed to observers."""

    n: int
    t: float
    omega: np.ndarray
    v: VelocityField
    omega_gamma: tuple
    snap: ReducedSnapshot


@dataclass
class Trajectory:
    """Result of a run: stored snapshots plus per-level and per-step logs."""

    grid: Grid
    params: SolverParams
    reduced: ReducedData
    omega0: np.ndarray
    times: list = field(default_factory=list)  # every level
    stored_index: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    stream: list = field(default_factory=list)
    steps: list = field(default_factory=list)  # StepLog per step
    omega_gamma: list = field(default_factory=list)  # per level, (2, n_s)
    tangential: list = field(default_factory=list)  # v.s per level, (2, n_s)
    level_stats: list = field(default_factory=list)
    observers: tuple = ()

    @property
    def stored_times(self):
        return [self.times[i] for i in self.stored_index]

    @property
    def final(self):
        return self.snapshots[-1]

    @property
    def T(self):
        return self.times[-1]

    def snapshot_at(self, t: float):
        k = int(np.argmin(np.abs(np.asarray(self.stored_times) - t)))
        return self.snapshots[k]

    def is_dense(self) -> bool:
        return len(self.stored_index) == len(self.times)


def _level_stats(level: Level):
    snap = level.snap
    vs = np.stack([level.v.boundary_tangential(k) for k in range(2)])
    return {
        "t": level.t,
        "max_omega": float(np.max(np.abs(level.omega))),
        "max_gamma": float(max(np.max(np.abs(x)) for x in snap.gamma)),
        "max_g": float(max(np.max(np.abs(x)) for x in snap.g)),
        "max_vs": float(np.max(np.abs(vs))),
        "max_omega_gamma": float(max(np.max(np.abs(x)) for x in level.omega_gamma)),
    }, vs


def _march(
    grid: Grid,
    reduced: ReducedData,
    omega0,
    params: SolverParams,
    source: Callable,
    times: Sequence[float] | None = None,
    observers: Sequence = (),
    store_every: int | None = None,
    store_stream: bool = False,
):
    """Shared time loop. ``source(n, t, omega)`` gives the elliptic right-hand side."""
    op = TransportOperator(grid, params.nu, params.scheme)
    omega = np.array(omega0, dtype=float)
    traj = Trajectory(grid, params, reduced, omega.copy(), observers=tuple(observers))
    store_every = store_every or params.store_every
    T = params.T
    fixed = times is not None
    n = 0
    t = 0.0
    dt_unit = None
    while True:
        snap = reduced.at(t)
        h = solve_stream(source(n, t, omega), snap.A[0], snap.A[1], grid)
        v = velocity_from_stream(h, grid)
        og = boundary_vorticity(v, snap)
        level = Level(n, t, omega, v, og, snap)
        stats, vs = _level_stats(level)
        traj.times.append(t)
        traj.level_stats.append(stats)
        traj.omega_gamma.append(np.stack(og))
        traj.tangential.append(vs)
        last = (fixed and n == len(times) - 1) or (not fixed and t >= T - 1e-12 * T)
        if n % store_every == 0 or last:
            traj.stored_index.append(n)
            traj.snapshots.append(omega.copy())
            if store_stream:
                traj.stream.append(h)
        for obs in observers:
            obs.level(level)
        if last:
            break
        if fixed:
            dt = times[n + 1] - times[n]
        elif params.dt:
            dt = min(params.dt, T - t)
        else:
            limit = op.max_stable_dt(v, params.cfl)
            if dt_unit is None:
                nsteps = max(1, int(np.ceil(T / min(limit, T))))
                dt_unit = T / nsteps
            while dt_unit > limit:
                dt_unit *= 0.5
            dt = min(dt_unit, T - t)
        omega, log = op.step(omega, v, og, dt, cfl=1.0)
        traj.steps.append(log)
        n += 1
        t = times[n] if fixed else (T if abs(T - (t + dt)) <= 1e-12 * T else t + dt)
    for obs in observers:
        if hasattr(obs, "finish"):
            obs.finish()
    return traj


def march_coupled(
    grid: Grid,
    reduced: ReducedData,
    omega0,
    params: SolverParams,
    observers: Sequence = (),
    store_every: int | None = None,
    store_stream: bool = False,
) -> Trajectory:
    """March the coupled system with the identity window (``theta`` treated as 0).

    Each level solves ``-lap h = [omega]_R``, ``h = A``, and the step uses the
    resulting velocity and boundary vorticity.
    """
    R = params.cutoff_level

    def source(n, t, omega):
        return cutoff(omega, R)

    return _march(grid, reduced, omega0, params, source, None, observers, store_every, store_stream)


def _sliding_window(fields, dt, m, R):
    """Trapezoid forward averages over ``m`` steps with zero extension."""
    clamped = [cutoff(f, R) for f in fields]
    n_lv = len(clamped)
    zero = np.zeros_like(clamped[0])
    out = []
    for n in range(n_lv):
        acc = np.zeros_like(zero)
        for j in range(m + 1):
            idx = n + j
            val = clamped[idx] if idx < n_lv else zero
            w = 0.5 if j in (0, m) else 1.0
            acc += w * val
        out.append(acc * dt / (m * dt))
    return out


@dataclass
class PicardReport:
    iterations: int
    errors: list
    ratios: list
    converged: bool

    @property
    def final_ratio(self):
        return self.ratios[-1] if self.ratios else float("nan")


def picard_slab(
    grid: Grid,
    reduced: ReducedData,
    omega0,
    params: SolverParams,
    steps_per_window: int = 8,
    max_iters: int = 30,
    tol: float = 1e-8,
    observers: Sequence = (),
):
    """Fixed-point construction on ``[0, T]`` with the forward window average.

    Starting from the frozen trajectory ``omega(t) = omega0``, each iteration
    computes velocities from the window average of the previous iterate and
    re-solves the advection-diffusion slab. The step is ``theta /
    steps_per_window``. Iteration stops when the largest ``L2`` difference
    between consecutive iterates drops below ``tol``.

    Returns
    -------
    (Trajectory, PicardReport)

    Raises
    ------
    NoConvergence
        After ``max_iters`` iterations without reaching ``tol``.
    """
    if params.nu <= 0 or params.theta <= 0:
        raise ValueError("picard_slab needs nu > 0 and theta > 0")
    m = int(steps_per_window)
    dt = params.theta / m
    n_steps = int(round(params.T / dt))
    if abs(n_steps * dt - params.T) > 1e-9 * params.T:
        raise ValueError("T must be a multiple of theta / steps_per_window")
    times = [k * dt for k in range(n_steps + 1)]
    R = params.cutoff_level
    prev = [np.array(omega0, dtype=float)] * (n_steps + 1)
    errors, ratios = [], []
    for it in range(1, max_iters + 1):
        avg = _sliding_window(prev, dt, m, R)
        traj = _march(
            grid, reduced, omega0, params, lambda n, t, w: avg[n], times, (), 1
        )
        err = max(discrete_norm(a - b, grid, 2) for a, b in zip(traj.snapshots, prev))
        errors.append(err)
        if len(errors) > 1:
            ratios.append(err / errors[-2] if errors[-2] > 0 else 0.0)
        prev = traj.snapshots
        if err < tol:
            if observers:
                traj = _march(grid, reduced, omega0, params, lambda n, t, w: avg[n], times, observers, 1)
            return traj, PicardReport(it, errors, ratios, True)
    raise NoConvergence(
        f"no convergence after {max_iters} iterations (last error {errors[-1]:.3e})",
        ratio=ratios[-1] if ratios else float("nan"),
        history=errors,
    )


class ExtensionField:
    """Interior extension of the boundary vorticity and the initial data.

    ``value = chi(d/delta) * omega_Gamma(P x, t) + (1 - chi(d/delta)) *
    rho(t) * omega0`` with ``chi`` a smoothstep from 1 at ``d = 0`` to 0 at
    ``d = delta``, ``P`` the closest-point projection and ``rho`` a ramp from
    1 at ``t = 0`` to 0 at ``t = 2 theta``.
    """

    def __init__(self, grid: Grid, delta: float, theta: float, omega0, times=(), omega_gamma=()):
        geom = grid.geom
        if not 0 < delta <= 0.5 * geom.sigma0 * (1 + 1e-12):
            raise BadDelta(f"delta = {delta} outside (0, sigma0/2 = {0.5 * geom.sigma0:g}]")
        self.grid = grid
        self.delta = float(delta)
        self.theta = float(theta)
        self.omega0 = np.asarray(omega0, dtype=float)
        self.times = list(times)
        self.omega_gamma = [np.asarray(x) for x in omega_gamma]
        pts = np.stack([grid.xc, grid.yc], axis=-1)
        d = signed_distance(geom, pts)
        self.chi = 1.0 - smoothstep(d / self.delta)
        outer_side = grid.rc[:, None] >= 0.5 * (geom.r_inner + geom.r_outer)
        self.outer_side = np.broadcast_to(outer_side, grid.shape)

    def rho(self, t):
        if self.theta <= 0:
            return 1.0 if t <= 0 else 0.0
        return float(1.0 - smoothstep(t / (2.0 * self.theta)))

    def append(self, t, omega_gamma):
        self.times.append(float(t))
        self.omega_gamma.append(np.asarray(omega_gamma))

    def projected(self, omega_gamma):
        """Boundary vorticity carried to every cell along the radial normal."""
        faces = np.stack([_faces_from_nodes(omega_gamma[0]), _faces_from_nodes(omega_gamma[1])])
        return np.where(self.outer_side, faces[0][None, :], faces[1][None, :])

    def cells(self, t, omega_gamma):
        return self.chi * self.projected(omega_gamma) + (1 - self.chi) * self.rho(t) * self.omega0

    def at_level(self, n):
        return self.cells(self.times[n], self.omega_gamma[n])

    def boundary_trace(self, n, comp_index):
        """Trace on a circle (``chi = 1`` there), at the face midpoints."""
        return _faces_from_nodes(self.omega_gamma[n][comp_index])


def extend_boundary_vorticity(trajectory: Trajectory, delta: float) -> ExtensionField:
    """Extension field for every level of a finished trajectory."""
    return ExtensionField(
        trajectory.grid,
        delta,
        trajectory.reduced.theta,
        trajectory.omega0,
        trajectory.times,
        trajectory.omega_gamma,
    )
