"""Raw boundary data, the slip-to-vorticity reduction and data mollification.

Raw data are the normal velocity ``a``, the friction coefficient ``alpha``
and the slip forcing ``b`` on each boundary circle, plus the initial
vorticity ``omega0``. The reduction produces

* ``gamma = 2k - alpha``,
* ``g = b - 2 a'_s``,
* ``A = int_0^s a``, the Dirichlet datum of the stream function,

so that the Navier condition becomes the vorticity trace condition
``omega = gamma v.s + g``.

Boundary callables have the signature ``f(component, s, t)`` with ``s`` the
arc length of the nodes on that component and return an array shaped like
``s``. ``omega0`` is a callable ``omega0(x, y)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.ndimage import gaussian_filter1d

from .errors import BadTheta, IncompatibleFlux
from .geometry import BoundaryComponent, DomainGeometry, boundary_partition, signed_distance

BoundaryFn = Callable[[BoundaryComponent, np.ndarray, float], np.ndarray]

COMPAT_RTOL = 1e-10


def _zero(comp, s, t):
    return np.zeros_like(np.asarray(s, dtype=float))


def _zero_field(x, y):
    return np.zeros(np.broadcast(x, y).shape)


def _zero_offset(comp, t):
    return 0.0


@dataclass(frozen=True)
class BoundaryData:
    """Raw traces ``(a, alpha, b)`` and initial vorticity.

    ``offset(component, t)`` is the constant added to ``A`` on a component.
    The difference between the inner and outer offsets is the volume flux
    across any cut joining the circles, so on the annulus it fixes the
    circulation around the hole.
    """

    a: BoundaryFn = _zero
    alpha: BoundaryFn = _zero
    b: BoundaryFn = _zero
    omega0: Callable = _zero_field
    offset: Callable = _zero_offset
    name: str = "custom"
    through_flow: bool = False

    def sample(self, geom: DomainGeometry, t: float):
        """Per-component node values of ``a``, ``alpha`` and ``b`` at time ``t``."""
        out = {"a": [], "alpha": [], "b": []}
        for comp in geom.components:
            s = comp.s
            for key in out:
                vals = np.broadcast_to(
                    np.asarray(getattr(self, key)(comp, s, t), dtype=float), s.shape
                )
                out[key].append(np.array(vals))
        return out


def check_compatibility(data, geom: DomainGeometry, t: float = 0.0, strict: bool = False):
    """Summed ``|closed integral of a ds|`` over the boundary circles.

    ``data`` is a :class:`BoundaryData` or a sequence of per-component node
    arrays of ``a``. In strict mode :class:`IncompatibleFlux` is raised when
    the imbalance exceeds ``1e-10 * max|a| * |Gamma|``, or when flow crosses
    an impermeable component.
    """
    if isinstance(data, BoundaryData):
        traces = data.sample(geom, t)["a"]
    else:
        traces = [np.asarray(x, dtype=float) for x in data]
    total = 0.0
    amax = 0.0
    for comp, a in zip(geom.components, traces):
        # trapezoid on a closed uniform curve is the plain sum
        total += abs(float(np.sum(a)) * comp.radius * comp.dtheta)
        amax = max(amax, float(np.max(np.abs(a))))
        if strict and comp.impermeable and np.max(np.abs(a)) > 0:
            raise IncompatibleFlux(f"nonzero normal velocity on impermeable {comp.name} circle")
    if strict:
        tol = COMPAT_RTOL * amax * geom.boundary_length
        if total > tol:
            raise IncompatibleFlux(f"net boundary flux {total:.3e} exceeds {tol:.3e}")
    return total


def arc_derivative(f, ds: float, method: str = "fd"):
    """Periodic derivative along a closed curve sampled with spacing ``ds``.

    ``method="fd"`` is the centred second-order difference; ``"spectral"``
    differentiates the trigonometric interpolant (Nyquist mode dropped).
    ``ds`` may be negative for clockwise-oriented components.
    """
    f = np.asarray(f, dtype=float)
    if method == "fd":
        return (np.roll(f, -1) - np.roll(f, 1)) / (2.0 * ds)
    if method == "spectral":
        n = f.size
        k = 2.0 * np.pi * np.fft.rfftfreq(n, d=ds)
        fh = np.fft.rfft(f)
        if n % 2 == 0:
            fh[-1] = 0.0
        return np.fft.irfft(1j * k * fh, n=n)
    raise ValueError(f"unknown derivative method {method!r}")


def accumulate_A(a, ds: float, tol: float | None = None):
    """Cumulative trapezoid antiderivative with ``A[0] = 0`` on a closed curve.

    The closure drift (the full-loop integral) is removed linearly; it must
    be below ``tol`` (default ``1e-10 * max|a| * |ds| * n``), otherwise
    :class:`IncompatibleFlux` is raised.
    """
    a = np.asarray(a, dtype=float)
    n = a.size
    loop = np.append(a, a[0])
    cum = cumulative_trapezoid(loop, dx=ds, initial=0.0)
    drift = cum[-1]
    if tol is None:
        tol = COMPAT_RTOL * max(float(np.max(np.abs(a))), 1e-300) * abs(ds) * n
    if abs(drift) > tol:
        raise IncompatibleFlux(f"closure drift {drift:.3e} exceeds {tol:.3e}")
    return cum[:-1] - drift * np.arange(n) / n


def smoothstep(x):
    """``3x^2 - 2x^3`` clipped to ``[0, 1]``."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def time_ramp(t, theta: float):
    """0 on ``[0, theta]``, 1 after ``2 theta``; identically 1 when ``theta == 0``."""
    if theta <= 0:
        return np.ones_like(np.asarray(t, dtype=float))
    return smoothstep((np.asarray(t, dtype=float) - theta) / theta)


def interior_cutoff(d, theta: float):
    """0 where ``d <= theta``, 1 where ``d >= 1.5 theta``."""
    if theta <= 0:
        return np.ones_like(np.asarray(d, dtype=float))
    return smoothstep((np.asarray(d, dtype=float) - theta) / (0.5 * theta))


@dataclass(frozen=True)
class ReducedSnapshot:
    """Reduced boundary data at one time, one array per component."""

    t: float
    a: tuple
    A: tuple
    gamma: tuple
    g: tuple
    alpha: tuple
    b: tuple

    def labels(self, eps_sign: float = 1e-12):
        return tuple(boundary_partition(x, eps_sign) for x in self.a)


@dataclass(frozen=True)
class ReducedData:
    """Reduced functions ``(gamma, g, A)`` with mollification state.

    Parameters
    ----------
    data : BoundaryData
    geom : DomainGeometry
    theta : float
        Mollification time. ``gamma`` and ``g`` are multiplied by
        :func:`time_ramp`; ``a`` (and hence ``A``) is never ramped.
    derivative : {"spectral", "fd"}
        Method for ``a'_s`` inside ``g``.
    smooth_s, smooth_t : bool
        Optional Gaussian smoothing of width ``theta / 2`` along the boundary
        (periodic) and in time (Gauss-Hermite quadrature).
    """

    data: BoundaryData
    geom: DomainGeometry
    theta: float = 0.0
    derivative: str = "spectral"
    smooth_s: bool = False
    smooth_t: bool = False
    hermite_order: int = 7
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def _smooth_s(self, comp, f):
        if not self.smooth_s or self.theta <= 0:
            return f
        width = 0.5 * self.theta / abs(comp.ds)
        return gaussian_filter1d(f, width, mode="wrap")

    def _raw(self, t):
        if not self.smooth_t or self.theta <= 0:
            return self.data.sample(self.geom, t)
        x, w = np.polynomial.hermite_e.hermegauss(self.hermite_order)
        w = w / w.sum()
        acc = None
        for xi, wi in zip(x, w):
            sample = self.data.sample(self.geom, max(0.0, t + 0.5 * self.theta * xi))
            if acc is None:
                acc = {k: [wi * arr for arr in v] for k, v in sample.items()}
            else:
                for k, v in sample.items():
                    for i, arr in enumerate(v):
                        acc[k][i] = acc[k][i] + wi * arr
        return acc

    def at(self, t: float) -> ReducedSnapshot:
        key = float(t)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        raw = self._raw(key)
        ramp = float(time_ramp(key, self.theta))
        a_l, A_l, gam_l, g_l, al_l, b_l = [], [], [], [], [], []
        for k, comp in enumerate(self.geom.components):
            a = self._smooth_s(comp, raw["a"][k])
            alpha = self._smooth_s(comp, raw["alpha"][k])
            b = self._smooth_s(comp, raw["b"][k])
            if comp.impermeable and np.max(np.abs(a)) > 0:
                raise IncompatibleFlux(f"nonzero normal velocity on impermeable {comp.name} circle")
            A = accumulate_A(a, comp.ds) + float(self.data.offset(comp, key))
            gamma = ramp * (2.0 * comp.curvature - alpha)
            g = ramp * (b - 2.0 * arc_derivative(a, comp.ds, self.derivative))
            a_l.append(a)
            A_l.append(A)
            gam_l.append(gamma)
            g_l.append(g)
            # consistent raw coefficients for the mollified problem
            al_l.append(2.0 * comp.curvature - gamma)
            b_l.append(g + 2.0 * arc_derivative(a, comp.ds, self.derivative))
        snap = ReducedSnapshot(
            key, tuple(a_l), tuple(A_l), tuple(gam_l), tuple(g_l), tuple(al_l), tuple(b_l)
        )
        if len(self._cache) > 4096:
            self._cache.clear()
        self._cache[key] = snap
        return snap

    def gamma(self, t):
        return self.at(t).gamma

    def g(self, t):
        return self.at(t).g

    def A(self, t):
        return self.at(t).A

    def a(self, t):
        return self.at(t).a


def reduce_boundary_data(
    data: BoundaryData, geom: DomainGeometry, derivative: str = "spectral", t0: float = 0.0
) -> ReducedData:
    """Reduction ``gamma = 2k - alpha``, ``g = b - 2a'_s``, ``A = int a``.

    Compatibility is checked strictly at ``t0``; later times are checked
    when evaluated.
    """
    check_compatibility(data, geom, t0, strict=True)
    red = ReducedData(data, geom, 0.0, derivative)
    red.at(t0)
    return red


def sample_omega0(data: BoundaryData, grid):
    """Initial vorticity on cell centres."""
    vals = np.asarray(data.omega0(grid.xc, grid.yc), dtype=float)
    return np.array(np.broadcast_to(vals, grid.shape))


def mollify_data(
    reduced: ReducedData,
    omega0,
    theta: float,
    grid,
    T: float | None = None,
    smooth_s: bool = False,
    smooth_t: bool = False,
):
    """Apply the ``theta`` mollification to reduced data and initial vorticity.

    Returns a new :class:`ReducedData` whose ``gamma``, ``g`` vanish on
    ``[0, theta]`` and a copy of ``omega0`` (cell values on ``grid``) that
    vanishes within distance ``theta`` of the boundary and is unchanged
    beyond ``1.5 theta``.

    Raises
    ------
    BadTheta
        Unless ``0 < theta < min(sigma0, T / 4)``.
    """
    limit = reduced.geom.sigma0 if T is None else min(reduced.geom.sigma0, T / 4.0)
    if not 0.0 < theta < limit:
        raise BadTheta(f"theta = {theta} outside (0, {limit:g})")
    new = replace(reduced, theta=float(theta), smooth_s=smooth_s, smooth_t=smooth_t, _cache={})
    pts = np.stack([grid.xc, grid.yc], axis=-1)
    d = signed_distance(reduced.geom, pts)
    return new, np.asarray(omega0, dtype=float) * interior_cutoff(d, theta)
