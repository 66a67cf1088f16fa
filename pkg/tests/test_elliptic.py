import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from navslip.boundary_data import reduce_boundary_data
from navslip.elliptic import (
    Grid,
    ModalSolver,
    discrete_norm,
    lp_integral,
    normal_trace_error,
    slip_residual,
    solve_stream,
    velocity_from_stream,
)
from navslip.geometry import DomainGeometry
from navslip.scenarios import build_problem


def make_grid(n_r, r_inner=0.5):
    return Grid(DomainGeometry(r_inner=r_inner, n_s=2 * n_r), n_r)


def node_coords(grid):
    return grid.r[:, None], grid.theta[None, :]


def manufactured_error(n_r):
    g = make_grid(n_r)
    r0 = g.r0
    rc, thc = g.rc[:, None], g.thc[None, :]
    f = (rc - r0) * (1 - rc)
    fp = -2 * rc + (1 + r0)
    source = -(-2 + fp / rc - 4 * f / rc**2) * np.sin(2 * thc)
    zero = np.zeros(g.n_s)
    h = solve_stream(source, zero, zero, g)
    r, th = node_coords(g)
    exact = (r - r0) * (1 - r) * np.sin(2 * th)
    return float(np.max(np.abs(h - exact)))


class TestGrid:
    def test_areas_sum_to_domain(self):
        g = make_grid(32)
        assert abs(g.cell_area.sum() - g.geom.area) < 1e-12 * g.geom.area

    def test_too_coarse(self):
        with pytest.raises(ValueError):
            make_grid(2)

    def test_label(self):
        assert make_grid(16).label == "16x32"


class TestModalSolver:
    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=10, deadline=None)
    def test_solve_inverts_apply(self, seed):
        rng = np.random.default_rng(seed)
        n, n_s = 7, 12
        lower = rng.uniform(0.1, 1, n)
        upper = rng.uniform(0.1, 1, n)
        ang = rng.uniform(0.1, 1, n)
        diag = lower + upper + rng.uniform(0.1, 1, n)
        m = ModalSolver(diag, lower, upper, ang, n_s)
        x = rng.normal(size=(n, n_s))
        np.testing.assert_allclose(m.solve(m.apply(x)), x, atol=1e-10)


class TestSolveStream:
    def test_uniform_flow(self):
        errs = []
        for n_r in (16, 32, 64):
            g = make_grid(n_r)
            eps = 0.5
            h = solve_stream(
                np.zeros(g.shape), eps * g.r1 * np.sin(g.theta), eps * g.r0 * np.sin(g.theta), g,
                check_residual=True,
            )
            r, th = node_coords(g)
            errs.append(np.max(np.abs(h - eps * r * np.sin(th))))
        assert errs[0] / errs[1] > 3 and errs[1] / errs[2] > 3

    def test_radial_ode(self):
        errs = []
        for n_r in (16, 32, 64):
            g = make_grid(n_r)
            zero = np.zeros(g.n_s)
            h = solve_stream(np.ones(g.shape), zero, zero, g)
            r = g.r[:, None]
            exact = (1 - r**2) / 4 + 3 / (16 * np.log(2)) * np.log(r)
            errs.append(np.max(np.abs(h - exact)))
        assert errs[-1] < 1e-5
        assert errs[0] / errs[1] > 3 and errs[1] / errs[2] > 3

    def test_constant_data_exact(self):
        g = make_grid(16)
        c = np.full(g.n_s, 2.5)
        h = solve_stream(np.zeros(g.shape), c, c, g)
        assert np.max(np.abs(h - 2.5)) < 1e-13

    def test_manufactured_second_order(self):
        e1, e2 = manufactured_error(32), manufactured_error(64)
        assert 3 <= e1 / e2 <= 5

    def test_linearity(self):
        g = make_grid(16)
        rng = np.random.default_rng(1)
        w1, w2 = rng.normal(size=(2, *g.shape))
        a1, a2, b1, b2 = rng.normal(size=(4, g.n_s))
        lhs = solve_stream(w1 + w2, a1 + a2, b1 + b2, g)
        rhs = solve_stream(w1, a1, b1, g) + solve_stream(w2, a2, b2, g)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_harmonic_max_principle(self):
        g = make_grid(24)
        rng = np.random.default_rng(2)
        a_out, a_in = rng.normal(size=(2, g.n_s))
        h = solve_stream(np.zeros(g.shape), a_out, a_in, g)
        lo = min(a_out.min(), a_in.min())
        hi = max(a_out.max(), a_in.max())
        assert h.min() >= lo - 1e-12 and h.max() <= hi + 1e-12

    def test_gradient_bound_stays_bounded(self):
        ratios = []
        for n_r in (16, 32, 64):
            pb = build_problem("shear_inflow", n_r)
            snap = pb.reduced.at(0.0)
            h = solve_stream(pb.omega0, snap.A[0], snap.A[1], pb.grid)
            vx, vy = velocity_from_stream(h, pb.grid).cell_cartesian()
            data_norm = max(np.max(np.abs(a)) for a in snap.A)
            ratios.append(np.max(np.hypot(vx, vy)) / (discrete_norm(pb.omega0, pb.grid, 4) + data_norm))
        assert max(ratios) / min(ratios) < 1.5


class TestVelocity:
    def test_constant_stream_gives_rest(self):
        g = make_grid(8)
        v = velocity_from_stream(np.full(g.node_shape, 3.0), g)
        assert np.all(v.flux_r == 0) and np.all(v.flux_t == 0)

    def test_uniform_flow(self):
        g = make_grid(32)
        eps = 0.7
        r, th = node_coords(g)
        v = velocity_from_stream(eps * r * np.sin(th), g)
        vx, vy = v.cell_cartesian()
        assert np.max(np.abs(vx - eps)) < 5 * eps * g.dtheta**2
        assert np.max(np.abs(vy)) < 5 * eps * g.dtheta**2

    def test_rotation_profile(self):
        g = make_grid(64)
        c, C = 1.0, 0.05
        r = g.r[:, None] * np.ones(g.n_s)
        v = velocity_from_stream(c * (1 - r**2) / 4 + C * np.log(r), g)
        vr, vt = v.cell_polar()
        rc = g.rc[:, None]
        assert np.max(np.abs(vr)) < 1e-13
        assert np.max(np.abs(vt - (c * rc / 2 - C / rc))) < 1e-3

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=10, deadline=None)
    def test_divergence_free(self, seed):
        g = make_grid(8)
        h = np.random.default_rng(seed).normal(size=g.node_shape)
        assert np.max(np.abs(velocity_from_stream(h, g).divergence())) < 1e-12


class TestNormalTrace:
    def test_zero(self):
        g = make_grid(8)
        v = velocity_from_stream(np.zeros(g.node_shape), g)
        assert normal_trace_error(v, [np.zeros(g.n_s)] * 2) == 0.0

    def test_uniform_flow_second_order(self):
        errs = []
        eps = 0.5
        for n_r in (64, 128):
            pb = build_problem("uniform_throughflow", n_r, scenario_params={"eps": eps})
            snap = pb.reduced.at(0.0)
            h = solve_stream(np.zeros(pb.grid.shape), snap.A[0], snap.A[1], pb.grid)
            errs.append(normal_trace_error(velocity_from_stream(h, pb.grid), snap.a))
        assert errs[1] < 1e-3 * eps
        assert 3 < errs[0] / errs[1] < 5

    def test_matches_mollified_data(self):
        pb = build_problem("shear_inflow", 32, theta=0.1, smooth_s=True)
        snap = pb.reduced.at(0.5)
        h = solve_stream(np.zeros(pb.grid.shape), snap.A[0], snap.A[1], pb.grid)
        v = velocity_from_stream(h, pb.grid)
        raw = reduce_boundary_data(pb.data, pb.geom).at(0.5)
        assert normal_trace_error(v, snap.a) < normal_trace_error(v, raw.a)


class TestSlipResidual:
    @staticmethod
    def residuals(scenario, n_r, **params):
        pb = build_problem(scenario, n_r, scenario_params=params)
        snap = pb.reduced.at(0.0)
        h = solve_stream(pb.omega0, snap.A[0], snap.A[1], pb.grid)
        v = velocity_from_stream(h, pb.grid)
        direct, reduced = slip_residual(v, pb.omega0, snap, pb.geom)
        return max(np.max(np.abs(x)) for x in direct), max(np.max(np.abs(x)) for x in reduced)

    def test_solid_rotation_converges(self):
        d = [self.residuals("solid_rotation", n, vortex_strength=0.05) for n in (32, 64, 128)]
        assert all(r < 1e-12 for _, r in d)
        assert d[0][0] / d[1][0] > 2 and d[1][0] / d[2][0] > 2

    def test_zero_data_reduced_exact(self):
        assert self.residuals("zero", 16)[1] == 0.0

    def test_uniform_flow_converges(self):
        d = [self.residuals("uniform_throughflow", n) for n in (32, 64, 128)]
        assert all(r < 1e-12 for _, r in d)
        assert d[0][0] / d[1][0] > 2 and d[1][0] / d[2][0] > 2


class TestDiscreteNorm:
    def test_constant_l2(self):
        g = make_grid(32)
        assert discrete_norm(np.ones(g.shape), g, 2) == pytest.approx(np.sqrt(3 * np.pi / 4), rel=1e-12)

    def test_constant_max(self):
        g = make_grid(8)
        assert discrete_norm(np.full(g.shape, -2.0), g, np.inf) == 2.0

    def test_gaussian_sequence_tends_to_max(self):
        g = make_grid(64)
        f = np.exp(-((g.xc - 0.1) ** 2 + (g.yc - 0.7) ** 2) / 0.02)
        area = g.cell_area.sum()
        norms = [discrete_norm(f, g, p) / area ** (1 / p) for p in (4, 8, 16, 32, 64, 128)]
        assert all(b > a for a, b in zip(norms, norms[1:]))
        assert norms[-1] < f.max()

    def test_lp_integral_consistent(self):
        g = make_grid(16)
        f = np.random.default_rng(3).normal(size=g.shape)
        assert lp_integral(f, g, 4) == pytest.approx(discrete_norm(f, g, 4) ** 4)

    def test_zero_field(self):
        g = make_grid(8)
        assert discrete_norm(np.zeros(g.shape), g, 4) == 0.0
