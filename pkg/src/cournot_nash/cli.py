"""Command line entry point.

Exit status: 0 converged, 2 finished without convergence (files still
written), 1 configuration or runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import emit
from .config import (
    ConfigError,
    RunConfig,
    apply_overrides,
    build_problem,
    load_config,
    scheme_config,
    sweep_points,
)
from .errors import CournotNashError
from .model import TwoPopulationSpec

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2

log = logging.getLogger("cournot_nash")


def run(cfg: RunConfig, out: Path | None = None) -> tuple[int, dict]:
    """Solve one configuration and write its result files into ``out``.

    Returns the exit status and a row of headline numbers for sweep summaries.
    """
    from .multipop import solve_two_populations
    from .schemes import solve

    out = Path(out if out is not None else cfg.output)
    t0 = time.perf_counter()
    problem = build_problem(cfg)
    scfg = scheme_config(cfg)
    if isinstance(problem, TwoPopulationSpec):
        report = solve_two_populations(problem, scfg)
        wall = time.perf_counter() - t0
        emit.emit_two(out, problem, report, cfg, wall)
        mu, nu = problem.pop1.mu.weights, report.nu1.weights
        row = {"overlap": report.overlap, "concentration": report.pop1.concentration,
               "concentration2": report.pop2.concentration,
               "nu2_mu2_l1": float(np.sum(np.abs(report.nu2.weights - problem.pop2.mu.weights)))}
    else:
        report = solve(problem, scfg)
        wall = time.perf_counter() - t0
        emit.emit_single(out, problem, report, cfg, wall)
        mu, nu = problem.mu.weights, report.nu.weights
        row = {"concentration": report.concentration, "exploitability": report.exploitability}
    row.update(
        converged=report.converged,
        outer_iterations=report.outer_iterations,
        cycles=report.cycles,
        objective=report.objective,
        gibbs_residual=report.gibbs_residual,
        nu_mu_l1=float(np.sum(np.abs(nu - mu))),
        wall_time=wall,
    )
    for note in report.notes:
        log.warning(note)
    return (EXIT_OK if report.converged else EXIT_NOT_CONVERGED), row


def _label(value) -> str:
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return value if isinstance(value, str) else emit.fmt(value)


def _point_dir(base: Path, index: int, parameter: str, value) -> Path:
    return base / f"{index:02d}_{parameter.split('.')[-1]}={_label(value)}"


def _run_point(args):
    index, value, cfg, out = args
    try:
        status, row = run(cfg, out)
    except CournotNashError as exc:
        status, row = EXIT_ERROR, {"error": str(exc)}
    row = {"index": index, "value": _label(value), "status": status, **row}
    return row


SUMMARY_COLUMNS = ["index", "value", "status", "converged", "outer_iterations", "cycles",
                   "objective", "gibbs_residual", "concentration", "concentration2",
                   "exploitability", "overlap", "nu_mu_l1", "nu2_mu2_l1", "wall_time", "error"]


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, str)):
        return str(v)
    return emit.fmt(v)


def run_sweep(cfg: RunConfig, out: Path | None = None, threads: int = 1) -> tuple[int, list]:
    out = Path(out if out is not None else cfg.output)
    points = sweep_points(cfg)
    jobs = [(k, v, c, _point_dir(out, k, cfg.sweep.parameter, v)) for k, (v, c) in enumerate(points)]
    workers = max(1, min(threads, len(jobs)))
    if workers == 1:
        rows = [_run_point(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_point, jobs))
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter"] + SUMMARY_COLUMNS)
        for row in rows:
            w.writerow([cfg.sweep.parameter] + [_cell(row.get(c)) for c in SUMMARY_COLUMNS])
    statuses = [r["status"] for r in rows]
    if EXIT_ERROR in statuses:
        return EXIT_ERROR, rows
    return (EXIT_NOT_CONVERGED if EXIT_NOT_CONVERGED in statuses else EXIT_OK), rows


def diagnose(path: Path) -> int:
    """Print a saved report and re-check its certificates against the stored tolerances."""
    doc = json.loads(Path(path).read_text())
    s = doc["summary"]
    tol = doc["config"]["tolerances"]["outer"]
    for key in ("scheme", "converged", "stop_reason", "outer_iterations", "cycles",
                "prox_evaluations", "objective", "gibbs_residual", "marginal_residual",
                "exploitability", "concentration", "overlap", "wall_time"):
        if key in s:
            print(f"{key:>18}: {s[key]}")
    checks = {
        "gibbs certificate": s["gibbs_residual"] is not None and s["gibbs_residual"] <= 10 * tol,
        "first marginal": s["marginal_residual"] is not None and s["marginal_residual"] <= 1e-12,
    }
    base = Path(path).parent
    for name in ("nu.csv", "nu2.csv"):
        f = base / name
        if f.exists():
            with open(f) as fh:
                total = sum(float(r["weight"]) for r in csv.DictReader(fh))
            checks[f"{name} mass"] = abs(total - 1.0) <= 1e-9
    for name, ok in checks.items():
        print(f"{'ok' if ok else 'FAILED':>6}  {name}")
    for note in s.get("notes", []):
        print(f"  note: {note}")
    return EXIT_OK if s["converged"] and all(checks.values()) else EXIT_NOT_CONVERGED


def oracle_instances():
    """Tiny convex problems small enough for exhaustive search over the simplex."""
    from .model import (CongestionSpec, DiscreteSpace, ProbabilityVector, ProblemSpec,
                        interaction_kernel, power_cost, power_potential)

    out = []
    for name, xs, ys, w, eps in (
        ("3x3", [0.0, 1.0, 2.0], [0.0, 1.0, 2.0], [0.2, 0.5, 0.3], 0.5),
        ("2x2", [0.0, 1.0], [0.0, 1.0], [0.7, 0.3], 0.3),
        ("4x3", [0.0, 0.5, 1.5, 2.0], [0.0, 1.0, 2.0], [0.1, 0.4, 0.3, 0.2], 1.0),
    ):
        X, Y = DiscreteSpace(np.array(xs)[:, None]), DiscreteSpace(np.array(ys)[:, None])
        out.append((name, ProblemSpec(
            X=X, Y=Y, mu=ProbabilityVector(X, np.array(w)), cost=power_cost(X, Y, 2.0),
            congestion=CongestionSpec("power", 2.0), interaction=interaction_kernel(Y, 0.1, 2.0),
            potential=power_potential(Y, 1.0, 2.0, 0.5), epsilon=eps,
        )))
    return out


def run_oracle(tol: float = 1e-4) -> int:
    from .diagnostics import brute_force_minimize
    from .dykstra import DykstraConfig
    from .schemes import SchemeConfig, solve_implicit

    cfg = SchemeConfig(scheme="implicit", outer_tol=1e-12, dykstra=DykstraConfig(tol_nu=1e-13))
    ok = True
    for name, problem in oracle_instances():
        nu = solve_implicit(problem, cfg).nu.weights
        ref = brute_force_minimize(problem)
        dist = float(np.sum(np.abs(nu - ref)))
        passed = dist <= tol
        ok &= passed
        print(f"{name}: l1(solver, brute force) = {dist:.3e}  {'ok' if passed else 'FAILED'}")
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file or bundled name (e.g. fig1)")
    common.add_argument("--out", help="output directory (overrides the config's 'output')")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="set a dotted config key, e.g. cost.p=4 (repeatable)")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="concurrent sweep points (default: available cores)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="cournot-nash",
                                description="Entropic Cournot-Nash equilibria by KL proximal splitting.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve one configuration")
    sub.add_parser("sweep", parents=[common], help="run every value of the config's sweep")
    d = sub.add_parser("diagnose", parents=[common], help="re-check a saved report.json")
    d.add_argument("report")
    sub.add_parser("oracle", parents=[common], help="compare against brute force on tiny instances")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "diagnose":
            return diagnose(Path(args.report))
        if args.command == "oracle":
            return run_oracle()
        cfg = apply_overrides(load_config(args.config), args.override)
        out = Path(args.out) if args.out else None
        if args.command == "sweep":
            status, rows = run_sweep(cfg, out, max(1, args.threads))
            for r in rows:
                print(f"{r['index']:>3}  {r['value']!s:>10}  status {r['status']}")
            return status
        status, row = run(cfg, out)
        print(f"converged={row['converged']} outer={row['outer_iterations']} "
              f"cycles={row['cycles']} gibbs_residual={row['gibbs_residual']:.3e}")
        return status
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_ERROR
    except (CournotNashError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
