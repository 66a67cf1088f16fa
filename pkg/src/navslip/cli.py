"""Command-line entry point: ``navslip run|sweep|scenarios|check-config``.

Exit codes: 0 when every enabled check passes, 1 when a check fails or the
solver stops, 2 for usage, configuration and data errors. The worker count
of ``sweep`` is read from ``NAVSLIP_WORKERS`` (default 1).
"""

from __future__ import annotations

import argparse
import copy
import csv
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli_w

from .config import DENSE_CHECKS, RunConfig, parse_config
from .elliptic import discrete_norm
from .errors import NavslipError, NoConvergence, ParseError, ValidationError
from .estimates import (
    REPORT_COLUMNS,
    EstimateRecord,
    EstimateReport,
    ExtensionObserver,
    StripFluxObserver,
    WeakFormObserver,
    budget_terms,
    builtin_test_functions,
    lp_budget,
    max_principle_check,
    p_infinity_sweep,
    solver_gronwall_check,
    time_lipschitz_check,
)
from .io import RunLogObserver, write_run_log, write_snapshot
from .scenarios import build_problem, list_scenarios
from .transport import ExtensionField, march_coupled, picard_slab

WORKERS_ENV = "NAVSLIP_WORKERS"

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


@dataclass
class RunResult:
    directory: str
    status: int
    message: str = ""
    report: EstimateReport = field(default_factory=EstimateReport)
    final: np.ndarray | None = None


def write_resolved_config(cfg: RunConfig, path):
    with open(path, "wb") as fh:
        tomli_w.dump(cfg.to_dict(), fh)


def _informational(name, value, traj, **kw):
    meta = {"nu": traj.params.nu, "theta": traj.reduced.theta, "grid": traj.grid.label}
    meta.update(kw)
    return EstimateRecord(name, float(value), float("inf"), True, **meta)


def execute(cfg: RunConfig, outdir) -> RunResult:
    """One run: march (or Picard slab), snapshots, log, report.

    Setup errors (bad data such as incompatible flux) give status 2; solver
    errors and failed checks give status 1.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_resolved_config(cfg, outdir / "config.toml")
    checks = list(cfg.output.checks)
    try:
        pb = build_problem(**cfg.problem_kwargs())
    except (NavslipError, ValueError) as exc:
        return RunResult(str(outdir), EXIT_USAGE, f"{type(exc).__name__}: {exc}")
    params = cfg.solver_params()
    grid = pb.grid
    dense = any(c in DENSE_CHECKS for c in checks) or cfg.solver.method == "picard"
    every = 1 if dense else (cfg.output.snapshot_every or 10**9)
    logger = RunLogObserver(grid, params.p)
    observers = [logger]
    weak = []
    strip = None
    if "weak_form" in checks:
        weak = [WeakFormObserver(tf, grid) for tf in builtin_test_functions(pb.geom, params.T)]
        observers += weak
    if "strip" in checks:
        ext = ExtensionField(grid, 0.5 * pb.geom.sigma0, pb.reduced.theta, pb.omega0)
        sigmas = [k * grid.dr for k in (32, 16, 8) if 2 * k * grid.dr <= pb.geom.sigma0]
        if sigmas:
            strip = StripFluxObserver(builtin_test_functions(pb.geom, params.T)[1], grid, sigmas, params.p, ext)
            observers += [ExtensionObserver(ext), strip]
    report = EstimateReport()
    try:
        if cfg.solver.method == "picard":
            traj, picard = picard_slab(
                grid, pb.reduced, pb.omega0, params, cfg.solver.steps_per_window,
                cfg.solver.max_iters, cfg.solver.tol, observers=observers,
            )
            for k, r in enumerate(picard.ratios):
                report.add(_informational("picard_ratio", r, traj, t0=float(k + 2)))
        else:
            traj = march_coupled(grid, pb.reduced, pb.omega0, params, observers=observers, store_every=every)
    except NoConvergence as exc:
        return RunResult(str(outdir), EXIT_FAIL, f"NoConvergence: {exc} (last ratio {exc.ratio:.3g})")
    except NavslipError as exc:
        return RunResult(str(outdir), EXIT_FAIL, f"{type(exc).__name__}: {exc}")
    terms = budget_terms(traj, params.p)
    write_run_log(outdir / "log.csv", logger.table(traj.steps, terms))
    snapdir = outdir / "snapshots"
    snapdir.mkdir(exist_ok=True)
    keep = cfg.output.snapshot_every
    for idx, w in zip(traj.stored_index, traj.snapshots):
        last = idx == len(traj.times) - 1
        if idx == 0 or last or (keep and idx % keep == 0):
            write_snapshot(snapdir / f"omega_{idx:06d}.snap", w, traj.times[idx], "omega")
    if "max_principle" in checks:
        report.extend(max_principle_check(traj))
    if "lp_budget" in checks:
        report.extend(lp_budget(traj, params.p))
    if "lp_equality" in checks:
        report.extend(lp_budget(traj, params.p, traj.T, include_outflux=True))
    if "gronwall" in checks:
        try:
            report.extend(solver_gronwall_check(traj, params.p)[0])
        except NavslipError as exc:
            report.add(EstimateRecord(f"gronwall_hypothesis {exc}", float("nan"), float("nan"), False))
    if "p_infinity" in checks:
        report.extend(p_infinity_sweep(traj))
    if "time_lipschitz" in checks:
        n = len(traj.times)
        deltas = tuple(d for d in (2, 4, 8, 16) if d < n)
        if len(deltas) >= 2:
            report.add(time_lipschitz_check(traj, params.p, deltas))
    for obs in weak:
        resid = obs.residual(params.nu, traj.steps)
        report.add(_informational(f"weak_form {obs.psi.name}", resid, traj, p=1.0))
    if strip is not None:
        for s in strip.sigmas:
            report.add(_informational("strip_flux", strip.functional(s), traj, sigma=s, p=params.p))
    report.to_csv(outdir / "report.csv")
    failure = report.first_failure()
    if failure is not None:
        msg = f"check failed: {failure.check_name} at t = {failure.t0:.6g} (lhs {failure.lhs:.6g} > rhs {failure.rhs:.6g})"
        return RunResult(str(outdir), EXIT_FAIL, msg, report, traj.final)
    return RunResult(str(outdir), EXIT_PASS, "", report, traj.final)


def _fmt_value(x):
    return f"{x:.3e}".replace("+", "")


def sweep_jobs(cfg: RunConfig):
    """``(subdirectory name, config)`` for every sweep member, in a fixed order.

    ``nu_list`` gets an extra ``nu = 0`` reference run. Lists that are empty
    keep the base value.
    """
    nus = list(cfg.sweep.nu_list)
    if nus:
        nus = nus + [0.0]
    else:
        nus = [cfg.solver.nu]
    thetas = list(cfg.sweep.theta_list) or [cfg.solver.theta]
    grids = list(cfg.sweep.grid_list) or [cfg.geometry.n_r]
    jobs = []
    for n_r in grids:
        for theta in thetas:
            for nu in nus:
                sub = copy.deepcopy(cfg)
                sub.sweep.nu_list, sub.sweep.theta_list, sub.sweep.grid_list = [], [], []
                sub.geometry.n_r = int(n_r)
                if cfg.sweep.grid_list:
                    sub.geometry.n_s = 0
                sub.solver.theta = float(theta)
                sub.solver.nu = float(nu)
                parts = []
                if cfg.sweep.grid_list:
                    parts.append(f"nr_{int(n_r)}")
                if cfg.sweep.theta_list:
                    parts.append(f"theta_{_fmt_value(theta)}")
                if cfg.sweep.nu_list:
                    parts.append(f"nu_{_fmt_value(nu)}")
                jobs.append(("_".join(parts) or "run", sub))
    return jobs


def _run_job(job):
    outdir, cfg = job
    return execute(cfg, outdir)


def run_sweep(cfg: RunConfig, outdir, workers: int = 1):
    """Every sweep member in its own subdirectory plus ``sweep_summary.csv``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_resolved_config(cfg, outdir / "config.toml")
    jobs = sweep_jobs(cfg)
    payload = [(str(outdir / name), sub) for name, sub in jobs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job, payload))
    else:
        results = [_run_job(p) for p in payload]
    summary = []
    for (name, sub), res in zip(jobs, results):
        for rec in res.report.records:
            summary.append((name, rec))
        if res.status != EXIT_PASS and not res.report.records:
            summary.append((name, EstimateRecord(f"run_error {res.message}", float("nan"), float("nan"), False,
                                                 nu=sub.solver.nu, theta=sub.solver.theta)))
    summary += _sweep_differences(cfg, jobs, results)
    with open(outdir / "sweep_summary.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["run"] + REPORT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for name, rec in summary:
            writer.writerow(dict(rec.row(), run=name))
    return results, summary


def _sweep_differences(cfg, jobs, results, slack: float = 0.1, floor: float = 1e-10):
    """Consecutive ``nu`` differences and distances to ``nu = 0`` per (grid, theta)."""
    if not cfg.sweep.nu_list:
        return []
    out = []
    groups = {}
    for (name, sub), res in zip(jobs, results):
        key = (sub.geometry.n_r, sub.solver.theta)
        groups.setdefault(key, []).append((sub, res))
    for (n_r, theta), members in groups.items():
        grid = build_problem(**members[0][0].problem_kwargs()).grid
        finals = {sub.solver.nu: res.final for sub, res in members if res.final is not None}
        nus = [float(x) for x in cfg.sweep.nu_list]
        label = f"sweep_nr_{n_r}_theta_{_fmt_value(theta)}"
        prev = float("inf")
        for a, b in zip(nus, nus[1:]):
            if a in finals and b in finals:
                d = discrete_norm(finals[a] - finals[b], grid, 2)
                ok = d < prev * (1 + slack) or d <= floor
                out.append((label, EstimateRecord("nu_consecutive", d, prev * (1 + slack), ok, nu=b, theta=theta,
                                                  grid=grid.label)))
                prev = d
        prev = float("inf")
        if 0.0 in finals:
            for nu in nus:
                if nu in finals:
                    d = discrete_norm(finals[nu] - finals[0.0], grid, 2)
                    out.append((label, EstimateRecord("nu_to_inviscid", d, prev, d < prev or d <= floor, nu=nu,
                                                      theta=theta, grid=grid.label)))
                    prev = d
    return out


def _workers():
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError([f"{WORKERS_ENV}={raw!r} is not an integer"]) from None
    if n < 1:
        raise ValidationError([f"{WORKERS_ENV} must be at least 1"])
    return n


def _load(path):
    try:
        return parse_config(path)
    except ValidationError as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE) from None
    except ParseError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE) from None


def _cmd_run(args):
    cfg = _load(args.config)
    outdir = args.output or cfg.output.directory
    res = execute(cfg, outdir)
    if res.status != EXIT_PASS:
        print(res.message, file=sys.stderr)
    else:
        print(f"all checks passed; results in {outdir}")
    return res.status


def _cmd_sweep(args):
    cfg = _load(args.config)
    outdir = args.output or cfg.output.directory
    try:
        workers = _workers()
    except ValidationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    results, summary = run_sweep(cfg, outdir, workers)
    status = max((r.status for r in results), default=EXIT_PASS)
    failed = [(name, rec) for name, rec in summary if not rec.passed]
    if failed:
        name, rec = failed[0]
        print(f"check failed: {rec.check_name} in {name}", file=sys.stderr)
        status = max(status, EXIT_FAIL)
    for r in results:
        if r.status == EXIT_USAGE:
            print(f"{r.directory}: {r.message}", file=sys.stderr)
    if status == EXIT_PASS:
        print(f"{len(results)} runs, all checks passed; summary in {Path(outdir) / 'sweep_summary.csv'}")
    return status


def _cmd_scenarios(args):
    for name, desc in list_scenarios():
        print(f"{name:<20} {desc}")
    return EXIT_PASS


def _cmd_check_config(args):
    cfg = _load(args.config)
    sys.stdout.write(tomli_w.dumps(cfg.to_dict()))
    return EXIT_PASS


def build_parser():
    parser = argparse.ArgumentParser(prog="navslip", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run one configuration")
    p.add_argument("config")
    p.add_argument("-o", "--output", help="override output.directory")
    p.set_defaults(func=_cmd_run)
    p = sub.add_parser("sweep", help="run the sweep lists of a configuration")
    p.add_argument("config")
    p.add_argument("-o", "--output", help="override output.directory")
    p.set_defaults(func=_cmd_sweep)
    p = sub.add_parser("scenarios", help="list the named scenarios")
    p.set_defaults(func=_cmd_scenarios)
    p = sub.add_parser("check-config", help="validate a configuration and print it resolved")
    p.add_argument("config")
    p.set_defaults(func=_cmd_check_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_PASS
    try:
        return int(args.func(args))
    except SystemExit as exc:
        return int(exc.code)


if __name__ == "__main__":
    sys.exit(main())
