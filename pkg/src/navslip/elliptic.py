"""Polar finite-volume grid, stream-function solve and velocity recovery.

Layout (staggered):

* vorticity lives on cell centres, shape ``(n_r, n_s)``;
* the stream function lives on cell corners (nodes), shape ``(n_r + 1, n_s)``,
  rows 0 and ``n_r`` being the inner and outer boundary circles;
* velocity lives on faces as volume fluxes obtained from differences of the
  stream function along each face, so the discrete divergence of every cell
  telescopes to zero.

With ``v = rot h = (dh/dy, -dh/dx)`` the flux of ``v`` through a segment
from P to Q, measured towards its right-hand normal, is ``h(Q) - h(P)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverDiverged
from .geometry import DomainGeometry


class Grid:
    """Uniform polar grid on the annulus of ``geom``."""

    def __init__(self, geom: DomainGeometry, n_r: int):
        if n_r < 4:
            raise ValueError("n_r must be at least 4")
        self.geom = geom
        self.n_r = int(n_r)
        self.n_s = geom.n_s
        self.r0 = geom.r_inner
        self.r1 = geom.r_outer
        self.dr = (self.r1 - self.r0) / self.n_r
        self.dtheta = 2.0 * np.pi / self.n_s
        self.r = self.r0 + self.dr * np.arange(self.n_r + 1)
        self.theta = self.dtheta * np.arange(self.n_s)
        self.rc = 0.5 * (self.r[:-1] + self.r[1:])
        self.thc = self.theta + 0.5 * self.dtheta
        self.xc = self.rc[:, None] * np.cos(self.thc)[None, :]
        self.yc = self.rc[:, None] * np.sin(self.thc)[None, :]
        ring = 0.5 * (self.r[1:] ** 2 - self.r[:-1] ** 2) * self.dtheta
        self.cell_area = np.repeat(ring[:, None], self.n_s, axis=1)
        self.arc_length = self.r * self.dtheta  # arc faces, one per radius
        self.shape = (self.n_r, self.n_s)
        self.node_shape = (self.n_r + 1, self.n_s)

    def __repr__(self):
        return f"Grid(n_r={self.n_r}, n_s={self.n_s}, r=[{self.r0}, {self.r1}])"

    @property
    def label(self) -> str:
        return f"{self.n_r}x{self.n_s}"

    @property
    def h_min(self) -> float:
        return min(self.dr, self.r0 * self.dtheta)

    @cached_property
    def stream_operator(self) -> "StreamOperator":
        return StreamOperator(self)

    def boundary_radius(self, comp_index: int) -> float:
        return self.r1 if comp_index == 0 else self.r0


class ModalSolver:
    """Direct solver for rotation-invariant polar five-point systems.

    The operator maps an ``(n, n_s)`` array ``x`` to
    ``diag[i] x[i] - lower[i] x[i-1] - upper[i] x[i+1]
    + ang[i] (2 x[i] - x[i, j-1] - x[i, j+1])`` (periodic in ``j``).
    A real FFT in the angle splits it into one tridiagonal system per
    angular mode; all modes are factorized together once.
    """

    def __init__(self, diag, lower, upper, ang, n_s: int):
        self.diag = np.asarray(diag, dtype=float)
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self.ang = np.asarray(ang, dtype=float)
        self.n = self.diag.size
        self.n_s = int(n_s)
        nm = self.n_s // 2 + 1
        lam = 2.0 - 2.0 * np.cos(2.0 * np.pi * np.arange(nm) / self.n_s)
        main = (self.diag[None, :] + self.ang[None, :] * lam[:, None]).ravel()
        off_lo = np.tile(np.append(-self.lower[1:], 0.0), nm)[:-1]
        off_up = np.tile(np.append(-self.upper[:-1], 0.0), nm)[:-1]
        mat = sp.diags([off_lo, main, off_up], [-1, 0, 1], format="csc")
        self.lu = spla.splu(mat, permc_spec="NATURAL")

    def solve(self, rhs):
        n, nm = self.n, self.n_s // 2 + 1
        fh = np.fft.rfft(np.asarray(rhs, dtype=float), axis=1)
        b = fh.T.reshape(-1)
        sol = self.lu.solve(np.stack([b.real, b.imag], axis=1))
        xh = (sol[:, 0] + 1j * sol[:, 1]).reshape(nm, n).T
        return np.fft.irfft(xh, n=self.n_s, axis=1)

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        out = self.diag[:, None] * x
        out[1:] -= self.lower[1:, None] * x[:-1]
        out[:-1] -= self.upper[:-1, None] * x[1:]
        out += self.ang[:, None] * (2 * x - np.roll(x, 1, axis=1) - np.roll(x, -1, axis=1))
        return out


class StreamOperator:
    """Factorized node Laplacian with Dirichlet rows eliminated.

    Equations are written in integrated (finite-volume) form over the dual
    cell of each interior node, which keeps the operator symmetric.
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        g = grid
        ri = g.r[1:-1]
        w_out = (ri + 0.5 * g.dr) * g.dtheta / g.dr
        w_in = (ri - 0.5 * g.dr) * g.dtheta / g.dr
        w_th = g.dr / (ri * g.dtheta)
        self.w_out_first = w_in[0]
        self.w_out_last = w_out[-1]
        self.modal = ModalSolver(w_out + w_in, w_in, w_out, w_th, g.n_s)
        rl = g.r[1:-1] - 0.5 * g.dr
        rh = g.r[1:-1] + 0.5 * g.dr
        quarter = 0.25 * g.dtheta
        self.w_lo = (g.r[1:-1] ** 2 - rl**2) * quarter
        self.w_hi = (rh**2 - g.r[1:-1] ** 2) * quarter

    def dual_integral(self, source):
        """Integral of a cell-wise constant field over each interior dual cell."""
        left = np.roll(source, 1, axis=1)
        pair = source + left  # cells j-1 and j around node j
        return self.w_lo[:, None] * pair[:-1] + self.w_hi[:, None] * pair[1:]

    def solve(self, source, a_outer, a_inner, check_residual: bool = False):
        g = self.grid
        rhs = self.dual_integral(np.asarray(source, dtype=float))
        rhs[0] += self.w_out_first * np.asarray(a_inner, dtype=float)
        rhs[-1] += self.w_out_last * np.asarray(a_outer, dtype=float)
        sol = self.modal.solve(rhs)
        if check_residual:
            res = np.linalg.norm(self.modal.apply(sol) - rhs)
            scale = max(np.linalg.norm(rhs), 1e-300)
            if not np.isfinite(res) or res > 1e-10 * scale + 1e-14:
                raise SolverDiverged(f"stream solve residual {res:.3e}")
        h = np.empty(g.node_shape)
        h[0] = a_inner
        h[-1] = a_outer
        h[1:-1] = sol
        return h


def solve_stream(source, a_outer, a_inner, grid: Grid, check_residual: bool = False):
    """Solve ``-lap h = source`` with ``h = A`` on both circles.

    Parameters
    ----------
    source : ndarray, shape (n_r, n_s)
        Cell-centred right-hand side (the clamped/averaged vorticity).
    a_outer, a_inner : ndarray, shape (n_s,)
        Dirichlet values at the boundary nodes, indexed by angle.

    Returns
    -------
    ndarray, shape (n_r + 1, n_s)
        Stream function at the nodes.
    """
    return grid.stream_operator.solve(source, a_outer, a_inner, check_residual)


@dataclass
class VelocityField:
    """Face volume fluxes of ``v = rot h``.

    ``flux_r[i, j]``: flux in +e_r through the arc at radius ``r[i]`` between
    angles ``theta[j]`` and ``theta[j+1]``. ``flux_t[i, j]``: flux in +e_theta
    through the radial segment at ``theta[j]`` between ``r[i]`` and ``r[i+1]``.
    """

    grid: Grid
    h: np.ndarray
    flux_r: np.ndarray
    flux_t: np.ndarray

    @property
    def un_r(self):
        return self.flux_r / self.grid.arc_length[:, None]

    @property
    def un_t(self):
        return self.flux_t / self.grid.dr

    def divergence(self):
        """Net outflow of every cell (identically zero up to roundoff)."""
        fr, ft = self.flux_r, self.flux_t
        return fr[1:] - fr[:-1] + np.roll(ft, -1, axis=1) - ft

    def cell_polar(self):
        """Cell-centred (v_r, v_theta)."""
        un_r = self.un_r
        vr = 0.5 * (un_r[1:] + un_r[:-1])
        un_t = self.un_t
        vt = 0.5 * (un_t + np.roll(un_t, -1, axis=1))
        return vr, vt

    def cell_cartesian(self):
        vr, vt = self.cell_polar()
        th = self.grid.thc[None, :]
        c, s = np.cos(th), np.sin(th)
        return vr * c - vt * s, vr * s + vt * c

    def boundary_normal_faces(self, comp_index: int):
        """Outward normal velocity on the boundary faces of one circle."""
        if comp_index == 0:
            return self.un_r[-1]
        return -self.un_r[0]

    def boundary_flux_faces(self, comp_index: int):
        """Outward volume flux on the boundary faces of one circle."""
        if comp_index == 0:
            return self.flux_r[-1]
        return -self.flux_r[0]

    def boundary_tangential(self, comp_index: int):
        """Tangential velocity ``v . s = -dh/dn`` at the boundary nodes."""
        return -normal_derivative(self.h, self.grid, comp_index)

    def boundary_normal_nodes(self, comp_index: int):
        """Node value of ``v . n``: mean of the two adjacent boundary faces."""
        f = self.boundary_normal_faces(comp_index)
        return 0.5 * (f + np.roll(f, 1))


def velocity_from_stream(h, grid: Grid) -> VelocityField:
    h = np.asarray(h, dtype=float)
    flux_r = np.roll(h, -1, axis=1) - h
    flux_t = h[:-1] - h[1:]
    return VelocityField(grid, h, flux_r, flux_t)


def normal_derivative(h, grid: Grid, comp_index: int):
    """One-sided second-order outward normal derivative of ``h`` at boundary nodes."""
    dr = grid.dr
    if comp_index == 0:
        return (3 * h[-1] - 4 * h[-2] + h[-3]) / (2 * dr)
    return (3 * h[0] - 4 * h[1] + h[2]) / (2 * dr)


def _radial_second_derivative(h, grid: Grid, comp_index: int):
    dr2 = grid.dr**2
    if comp_index == 0:
        return (2 * h[-1] - 5 * h[-2] + 4 * h[-3] - h[-4]) / dr2
    return (2 * h[0] - 5 * h[1] + 4 * h[2] - h[3]) / dr2


def normal_trace_error(v: VelocityField, a_components) -> float:
    """Largest ``|v.n - a|`` over the boundary nodes of both circles."""
    err = 0.0
    for k, a in enumerate(a_components):
        err = max(err, float(np.max(np.abs(v.boundary_normal_nodes(k) - np.asarray(a)))))
    return err


def wall_trace(omega, grid: Grid, comp_index: int):
    """Second-order extrapolation of a cell field to the boundary nodes."""
    if comp_index == 0:
        face = 1.5 * omega[-1] - 0.5 * omega[-2]
    else:
        face = 1.5 * omega[0] - 0.5 * omega[1]
    return 0.5 * (face + np.roll(face, 1))


def slip_residual(v: VelocityField, omega, snapshot, geom: DomainGeometry):
    """Navier-slip residual at the boundary nodes, computed two ways.

    ``direct = 2 D(v) n.s + alpha v.s - b`` uses one-sided velocity gradients
    of the stream function; ``reduced = omega - gamma v.s - g`` uses the
    wall trace of the transported vorticity. ``snapshot`` is a
    :class:`navslip.boundary_data.ReducedSnapshot`; ``alpha`` and ``b`` are
    recovered from it as ``2k - gamma`` and ``g + 2 a'_s``.

    Returns two lists (one array per boundary circle).
    """
    grid = v.grid
    h = v.h
    direct, reduced = [], []
    for k, comp in enumerate(geom.components):
        r = grid.boundary_radius(k)
        row = h[-1] if k == 0 else h[0]
        h_r = (-1 if k == 1 else 1) * normal_derivative(h, grid, k)
        h_rr = _radial_second_derivative(h, grid, k)
        h_tt = (np.roll(row, -1) - 2 * row + np.roll(row, 1)) / grid.dtheta**2
        two_d_ns = -h_rr + h_r / r + h_tt / r**2
        vs = v.boundary_tangential(k)
        alpha = snapshot.alpha[k]
        b = snapshot.b[k]
        direct.append(two_d_ns + alpha * vs - b)
        reduced.append(wall_trace(omega, grid, k) - snapshot.gamma[k] * vs - snapshot.g[k])
    return direct, reduced


def discrete_norm(f, grid: Grid, p) -> float:
    """Cell-area-weighted ``L_p`` norm; ``p = inf`` gives the max norm."""
    f = np.abs(np.asarray(f, dtype=float))
    m = float(f.max()) if f.size else 0.0
    if np.isinf(p):
        return m
    if m == 0.0:
        return 0.0
    return m * float(np.sum(grid.cell_area * (f / m) ** p)) ** (1.0 / p)


def lp_integral(f, grid: Grid, p) -> float:
    """``sum |f|^p * area``, the discrete ``int |f|^p dx``."""
    return float(np.sum(grid.cell_area * np.abs(f) ** p))
