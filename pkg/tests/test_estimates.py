import math
from types import SimpleNamespace

import numpy as np
import pytest

from navslip.elliptic import Grid, discrete_norm, lp_integral
from navslip.errors import HypothesisFailed
from navslip.estimates import (
    EstimateRecord,
    EstimateReport,
    ExtensionObserver,
    InflowCollar,
    InteriorBump,
    SpaceTimeBump,
    StripFluxObserver,
    TimeStripObserver,
    WeakFormObserver,
    budget_terms,
    builtin_test_functions,
    discrete_gronwall_bound,
    forward_window,
    lp_budget,
    lp_equality_imbalance,
    max_principle_check,
    normalized_qnorm,
    p_infinity_sweep,
    replay,
    richardson_slack,
    solver_gronwall_check,
    strip_flux_functional,
    time_lipschitz_check,
    time_strip_functional,
    viscosity_sweep_report,
    weak_form_residual,
)
from navslip.geometry import DomainGeometry, boundary_partition
from navslip.scenarios import build_problem
from navslip.transport import ExtensionField, SolverParams, march_coupled


def run(scenario, n_r=16, nu=0.0, theta=0.0, T=0.2, dense=True, observers=(), scheme="upwind", **sp):
    pb = build_problem(scenario, n_r, theta=theta, T=T, scenario_params=sp)
    params = SolverParams(nu=nu, theta=theta, T=T, scheme=scheme)
    traj = march_coupled(pb.grid, pb.reduced, pb.omega0, params, observers=observers,
                         store_every=1 if dense else 10**9)
    return pb, traj


def outer_labels(pb):
    return [boundary_partition(a) for a in pb.reduced.at(0.0).a]


class TestReport:
    def test_slack_and_failure(self):
        rep = EstimateReport()
        rep.add(EstimateRecord("a", 1.0, 2.0, True))
        rep.add(EstimateRecord("b", 3.0, 2.0, False))
        assert not rep.passed
        assert rep.first_failure().check_name == "b"
        assert rep.min_slack() == -1.0
        assert rep.min_slack("a") == 1.0
        assert rep.min_slack("missing") == math.inf
        assert len(rep) == 2

    def test_csv(self, tmp_path):
        rep = EstimateReport([EstimateRecord("x", 0.5, 1.0, True, t0=0.1, grid="8x16")])
        rep.to_csv(tmp_path / "r.csv")
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "check_name,t0,p,nu,theta,sigma,grid,lhs,rhs,slack,pass"
        assert lines[1].startswith("x,0.1,nan,") and lines[1].endswith(",8x16,0.5,1.0,0.5,1")


class TestTestFunctions:
    def test_builtins_supported(self):
        pb = build_problem("shear_inflow", 32)
        fns = builtin_test_functions(pb.geom, 1.0)
        assert len(fns) == 3
        assert all(psi.check_support(pb.geom, outer_labels(pb), 1.0) for psi in fns)

    def test_collar_on_outflow_fails_support(self):
        pb = build_problem("shear_inflow", 32)
        psi = InflowCollar(theta_c=0.0, T=1.0)
        assert not psi.check_support(pb.geom, outer_labels(pb), 1.0)

    def test_interior_bump_vanishes_at_final_time(self):
        psi = InteriorBump(T=1.0)
        assert psi.value(0.0, 0.75, 1.0) == 0.0
        assert psi.value(0.0, 0.75, 0.5) == pytest.approx(1.0)

    def test_gradient_matches_finite_difference(self):
        psi = SpaceTimeBump(center=(0.1, -0.7), radius=0.2)
        x, y, t, h = 0.15, -0.65, 0.5, 1e-6
        gx, gy = psi.grad(x, y, t)
        fx = (psi.value(x + h, y, t) - psi.value(x - h, y, t)) / (2 * h)
        fy = (psi.value(x, y + h, t) - psi.value(x, y - h, t)) / (2 * h)
        assert gx == pytest.approx(fx, rel=1e-6) and gy == pytest.approx(fy, rel=1e-6)

    def test_laplacian_matches_finite_difference(self):
        psi = InteriorBump(center=(0.0, 0.75), radius=0.2)
        x, y, t, h = 0.05, 0.7, 0.5, 1e-4
        fd = (psi.value(x + h, y, t) + psi.value(x - h, y, t) + psi.value(x, y + h, t)
              + psi.value(x, y - h, t) - 4 * psi.value(x, y, t)) / h**2
        assert psi.laplacian(x, y, t) == pytest.approx(fd, rel=1e-5)


class TestMaxPrinciple:
    def test_no_boundary_forcing_bound_is_initial_max(self):
        _, traj = run("shear_inflow", nu=1e-2, gamma0=0.0, g0=0.0)
        rep = max_principle_check(traj)
        assert rep.passed
        w0 = np.max(np.abs(traj.omega0))
        assert all(r.rhs == w0 for r in rep.records)

    def test_solid_rotation_is_tight(self):
        _, traj = run("solid_rotation", nu=1e-2, vortex_strength=0.05)
        rep = max_principle_check(traj)
        assert rep.passed
        last = rep.records[-1]
        assert abs(last.lhs - 1.0) < 1e-8 and last.rhs == pytest.approx(1.0, abs=1e-8)

    def test_violation_detected(self):
        _, traj = run("zero", T=0.05)
        traj.level_stats[-1] = dict(traj.level_stats[-1], max_omega=1.0)
        assert not max_principle_check(traj).passed


class TestLpBudget:
    def test_impermeable_inviscid_nonincreasing(self):
        _, traj = run("shear_inflow", a0=0.0, gamma0=0.0, g0=0.0)
        y = [lp_integral(w, traj.grid, 4) for w in traj.snapshots]
        assert all(b <= a + 1e-8 for a, b in zip(y, y[1:]))
        assert lp_budget(traj, 4).passed

    def test_zero_data(self):
        _, traj = run("zero", T=0.05)
        rep = lp_budget(traj, 4)
        assert rep.passed
        assert all(r.lhs == 0.0 and r.rhs == 0.0 for r in rep.records)

    def test_gamma_minus_nonpositive(self):
        _, traj = run("shear_inflow")
        terms = budget_terms(traj, 4)
        assert np.all(terms.gamma_minus <= 0)
        assert np.all(np.diff(terms.influx) >= 0)

    def test_shear_inequality_and_equality(self):
        imb = []
        for n in (24, 48):
            _, traj = run("shear_inflow", n_r=n, T=0.3, scheme="minmod")
            assert lp_budget(traj, 4).passed
            imb.append(lp_equality_imbalance(traj, 4))
        assert imb[1] < 0.7 * imb[0]

    def test_roundoff_tolerated(self):
        _, traj = run("solid_rotation", nu=1e-1, T=0.1)
        assert lp_budget(traj, 4).passed

    def test_single_time(self):
        _, traj = run("shear_inflow")
        rep = lp_budget(traj, 4, t0=traj.T)
        assert len(rep) == 1 and rep.records[0].t0 == pytest.approx(traj.T)


class TestGronwall:
    def test_forward_window_identity(self):
        t = np.linspace(0, 1, 11)
        np.testing.assert_array_equal(forward_window(t, t**2, 0.0), t**2)

    def test_forward_window_constant(self):
        t = np.linspace(0, 1, 101)
        u = forward_window(t, np.ones_like(t), 0.1)
        np.testing.assert_allclose(u[t <= 0.9 + 1e-12], 1.0, atol=1e-12)
        assert u[-1] == 0.0

    def test_no_growth_rate(self):
        t = np.linspace(0, 1, 1001)
        B = 0.5 * np.ones_like(t)
        y = 1.0 + 0.5 * t
        res = discrete_gronwall_bound(t, y, 0.0, B, 0.01)
        np.testing.assert_allclose(res.bound, 2 * (1.0 + 0.5 * t), rtol=1e-12)
        assert res.passed

    def test_exponential(self):
        t = np.linspace(0, 1, 1001)
        res = discrete_gronwall_bound(t, np.exp(t), 1.0, 0.0, 0.01, check_until=0.99)
        assert res.passed
        assert res.min_ratio_slack > 0

    def test_hypothesis_failure(self):
        t = np.linspace(0, 1, 101)
        with pytest.raises(HypothesisFailed) as info:
            discrete_gronwall_bound(t, np.exp(3 * t), 1.0, 0.0, 0.0)
        assert 0 < info.value.first_violation <= 0.1

    def test_negative_inputs(self):
        t = np.linspace(0, 1, 11)
        with pytest.raises(ValueError):
            discrete_gronwall_bound(t, -np.ones_like(t), 1.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            discrete_gronwall_bound(t, np.ones_like(t), -1.0, 0.0, 0.0)

    def test_solver_check(self):
        _, traj = run("shear_inflow", nu=1e-2)
        rep, res = solver_gronwall_check(traj, 4)
        assert rep.passed and res.passed
        assert len(rep) == len(traj.times)

    def test_solver_check_needs_dense(self):
        _, traj = run("shear_inflow", dense=False)
        with pytest.raises(ValueError):
            solver_gronwall_check(traj)


class TestStripFunctionals:
    def test_zero_when_fields_match(self):
        g = Grid(DomainGeometry(n_s=32), 16)
        w = np.random.default_rng(0).normal(size=g.shape)
        ones = np.ones(g.shape)
        assert strip_flux_functional(w, w, ones, g, 0.05, 4, ones) == 0.0

    def test_zero_test_function(self):
        g = Grid(DomainGeometry(n_s=32), 16)
        w = np.ones(g.shape)
        assert strip_flux_functional(w, 0 * w, w, g, 0.05, 4, 0 * w) == 0.0

    def test_linear_in_psi_and_band(self):
        g = Grid(DomainGeometry(n_s=32), 16)
        w = np.ones(g.shape)
        one = strip_flux_functional(w, 0 * w, w, g, 0.05, 2, w)
        two = strip_flux_functional(w, 0 * w, w, g, 0.05, 2, 2 * w)
        assert one > 0 and two == pytest.approx(2 * one)

    def test_rejects_nonpositive_sigma(self):
        g = Grid(DomainGeometry(n_s=32), 16)
        w = np.ones(g.shape)
        with pytest.raises(ValueError):
            strip_flux_functional(w, w, w, g, 0.0, 4, w)

    def test_time_strip_constant_and_linear(self):
        t = np.linspace(0, 1, 101)
        assert time_strip_functional(t, np.full_like(t, 3.0), 0.25) == pytest.approx(3.0)
        assert time_strip_functional(t, t, 0.5) == pytest.approx(0.25)
        with pytest.raises(ValueError):
            time_strip_functional(t, t, 2.0)

    def test_observers_on_run(self):
        pb = build_problem("shear_inflow", 16, theta=0.04, T=0.2)
        params = SolverParams(nu=1e-3, theta=0.04, T=0.2)
        ext = ExtensionField(pb.grid, 0.1, 0.04, pb.omega0)
        psi = InteriorBump((0.0, 0.75), 0.2, 0.2, 0.02)
        dx = pb.grid.dr
        strip = StripFluxObserver(psi, pb.grid, [2 * dx, 4 * dx], 4, ext)
        tstrip = TimeStripObserver(psi, pb.grid, 4, ext, t_stop=0.1)
        march_coupled(pb.grid, pb.reduced, pb.omega0, params, observers=[ExtensionObserver(ext), strip, tstrip],
                      store_every=10**9)
        for s in strip.sigmas:
            assert math.isfinite(strip.functional(s))
        assert strip.floor() >= 0
        vals = [tstrip.functional(s) for s in (0.1, 0.05, 0.025)]
        assert all(v >= 0 for v in vals)
        assert tstrip.times[-1] <= 0.1 + 2 * params.T


class TestWeakForm:
    def test_zero_data(self):
        pb, traj = run("zero", T=0.1)
        assert weak_form_residual(traj, InteriorBump(T=0.1)) == 0.0

    def test_solid_rotation_converges(self):
        res = []
        for n in (16, 32, 64):
            _, traj = run("solid_rotation", n_r=n, T=0.5)
            res.append(weak_form_residual(traj, InteriorBump((0.0, 0.75), 0.2, 0.5, 0.1)))
        assert res[0] / res[1] > 2 and res[1] / res[2] > 2

    def test_observer_matches_replay(self):
        pb = build_problem("shear_inflow", 16, T=0.2)
        psi = InteriorBump((0.0, 0.75), 0.2, 0.2, 0.02)
        obs = WeakFormObserver(psi, pb.grid)
        traj = march_coupled(pb.grid, pb.reduced, pb.omega0, SolverParams(T=0.2), observers=[obs], store_every=1)
        assert obs.residual() == pytest.approx(weak_form_residual(traj, psi), rel=1e-10, abs=1e-14)

    def test_shear_residual_converges(self):
        res = []
        for n in (16, 32, 64):
            _, traj = run("shear_inflow", n_r=n, T=0.5, scheme="minmod")
            res.append(weak_form_residual(traj, InteriorBump((0.0, 0.75), 0.2, 0.5, 0.1)))
        assert res[0] / res[1] > 2 and res[1] / res[2] > 2

    def test_replay_needs_dense(self):
        _, traj = run("shear_inflow", dense=False)
        with pytest.raises(ValueError):
            replay(traj, [])


class TestTimeLipschitz:
    def test_steady_run(self):
        _, traj = run("solid_rotation", n_r=32, T=1.0)
        rec = time_lipschitz_check(traj, delta_steps=(1, 2, 4))
        assert rec.passed and rec.lhs == 1.0

    def test_linear_growth_constant_ratio(self):
        g = Grid(DomainGeometry(n_s=32), 16)
        profile = np.exp(-((g.xc) ** 2 + (g.yc - 0.75) ** 2) / 0.01)
        times = np.linspace(0, 1, 41)
        traj = SimpleNamespace(
            grid=g, times=list(times), snapshots=[t * profile for t in times],
            params=SimpleNamespace(cutoff_level=np.inf, nu=0.0),
            reduced=SimpleNamespace(theta=0.0), is_dense=lambda: True,
        )
        rec = time_lipschitz_check(traj)
        assert rec.passed
        np.testing.assert_allclose(rec.ratios, rec.ratios[0], rtol=1e-10)

    def test_offset_too_large(self):
        _, traj = run("zero", T=0.02)
        with pytest.raises(ValueError):
            time_lipschitz_check(traj, delta_steps=(10**6,), t_index=0)


class TestPInfinity:
    def test_normalized_constant(self):
        g = Grid(DomainGeometry(n_s=32), 16)
        for q in (2, 8, 1e9, np.inf):
            assert normalized_qnorm(np.full(g.shape, -3.0), g, q) == pytest.approx(3.0)
        assert normalized_qnorm(np.zeros(g.shape), g, 4) == 0.0

    def test_normalized_matches_definition(self):
        g = Grid(DomainGeometry(n_s=32), 16)
        f = np.random.default_rng(4).normal(size=g.shape)
        direct = discrete_norm(f, g, 4) / g.cell_area.sum() ** 0.25
        assert normalized_qnorm(f, g, 4) == pytest.approx(direct, rel=1e-12)

    def test_gaussian_tends_to_max(self):
        g = Grid(DomainGeometry(n_s=64), 32)
        f = np.exp(-(g.xc**2 + (g.yc - 0.75) ** 2) / 0.01)
        norms = [normalized_qnorm(f, g, q) for q in (4, 16, 64, 1e9)]
        assert all(b > a for a, b in zip(norms, norms[1:]))
        assert abs(norms[-1] - f.max()) < 1e-6

    def test_sweep_on_run(self):
        _, traj = run("shear_inflow", nu=1e-2, dense=False)
        rep = p_infinity_sweep(traj)
        assert rep.passed
        assert len(rep.by_name("inf2_budget")) == 4
        for name in ("qnorm_monotone", "qnorm_limit", "max_bound"):
            assert len(rep.by_name(name)) == 1


class TestViscositySweep:
    def test_solid_rotation_is_viscosity_independent(self):
        params = SolverParams(T=0.1)
        rep, finals = viscosity_sweep_report("solid_rotation", [1e-1, 1e-2], params, problem=dict(n_r=16))
        assert rep.passed
        assert set(finals) == {1e-1, 1e-2, 0.0}
        assert all(r.lhs < 1e-8 for r in rep.by_name("nu_consecutive") + rep.by_name("nu_to_inviscid"))

    def test_zero_scenario(self):
        rep, _ = viscosity_sweep_report("zero", [1e-1, 1e-2, 1e-3], SolverParams(T=0.05), problem=dict(n_r=8))
        assert rep.passed
        assert len(rep.by_name("nu_to_inviscid")) == 3

    def test_rejects_unsorted(self):
        with pytest.raises(ValueError):
            viscosity_sweep_report("zero", [1e-3, 1e-2], SolverParams(T=0.05), problem=dict(n_r=8))

    def test_shear_distance_shrinks(self):
        rep, _ = viscosity_sweep_report(
            "shear_inflow", [1e-1, 3e-2, 1e-2], SolverParams(T=0.2, scheme="minmod"), problem=dict(n_r=16)
        )
        d = [r.lhs for r in rep.by_name("nu_to_inviscid")]
        assert d[0] > d[1] > d[2]


class TestRichardsonSlack:
    def test_second_order_sequence(self):
        t = np.linspace(0, 1, 11)
        exact = np.sin(t)
        fine, coarse = exact + 0.01 * t, exact + 0.04 * t
        np.testing.assert_allclose(richardson_slack(t, fine, t, coarse, 2.0), 0.01 * t, atol=1e-15)

    def test_interpolates_coarse_times(self):
        tf, tc = np.linspace(0, 1, 21), np.linspace(0, 1, 11)
        assert np.all(richardson_slack(tf, 2 * tf, tc, 2 * tc) < 1e-15)

    def test_rejects_bad_order(self):
        with pytest.raises(ValueError):
            richardson_slack([0, 1], [0, 1], [0, 1], [0, 1], 0.0)
