"""Result files: CSV tables, report.json and a self-contained gnuplot script."""

from __future__ import annotations

import json
import math
from importlib import metadata
from pathlib import Path

import numpy as np

from .config import RunConfig, to_dict
from .model import DiscreteSpace


def version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def fmt(x) -> str:
    """Shortest decimal string that reads back to the same float."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


def _coord_names(prefix, dim):
    return [prefix] if dim == 1 else [f"{prefix}{k + 1}" for k in range(dim)]


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def write_measure(path: Path, space: DiscreteSpace, weights, index="j", coord="y"):
    header = [index] + _coord_names(coord, space.dim) + ["weight"]
    rows = ([k, *space.points[k], w] for k, w in enumerate(np.asarray(weights, dtype=float)))
    write_csv(path, header, rows)


def support_rows(gamma, X: DiscreteSpace, Y: DiscreteSpace, threshold: float):
    """Entries of gamma at or above ``threshold * max``, as (i, j, x..., y..., mass)."""
    lg = gamma.log
    cut = np.max(lg) + math.log(threshold)
    ii, jj = np.nonzero(lg >= cut)
    mass = np.exp(lg[ii, jj])
    return [[i, j, *X.points[i], *Y.points[j], m] for i, j, m in zip(ii, jj, mass)]


def write_support(path: Path, gamma, X, Y, threshold):
    header = ["i", "j"] + _coord_names("x", X.dim) + _coord_names("y", Y.dim) + ["mass"]
    write_csv(path, header, support_rows(gamma, X, Y, threshold))


def write_trace(path: Path, trace):
    write_csv(path, ["cycle", "nu_change", "marginal_residual", "seconds"],
              ([r.cycle, r.nu_change_l1, r.marginal_residual_l1, r.seconds] for r in trace))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, str)) or obj is None:
        return obj
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    x = float(obj)
    return x if math.isfinite(x) else None


def write_report(path: Path, report, cfg: RunConfig, wall_time: float):
    doc = {
        "version": version(),
        "summary": report.summary(),
        "outer_trace": list(report.outer_trace),
        "config": to_dict(cfg),
        "wall_time": wall_time,
    }
    path.write_text(json.dumps(_jsonable(doc), indent=2) + "\n")


def _block(name, header, rows):
    lines = [f"${name} << EOD", "# " + " ".join(header)]
    lines += [" ".join(fmt(v) for v in row) for row in rows]
    lines.append("EOD")
    return lines


def plot_script(X: DiscreteSpace, mu, nus, supports) -> str:
    """Gnuplot script with inline data: marginals overlaid, then the coupling support.

    ``nus`` and ``supports`` hold one entry per population.
    """
    dim = X.dim
    mu_list = mu if isinstance(mu, (list, tuple)) else [mu]
    lines = ["# marginals and coupling support; run with: gnuplot -p plot.gp"]
    for k, m in enumerate(mu_list, 1):
        lines += _block(f"mu{k}", ["point", "weight"], ([*X.points[i], w] for i, w in enumerate(m)))
    for k, nu in enumerate(nus, 1):
        lines += _block(f"nu{k}", ["point", "weight"], ([*X.points[j], w] for j, w in enumerate(nu)))
    for k, rows in enumerate(supports, 1):
        lines += _block(f"gamma{k}", ["i", "j"] + _coord_names("x", dim) + _coord_names("y", dim)
                        + ["mass"], rows)
    lines.append("set multiplot layout 1,2")
    styles = ["lw 2", "lw 2 dt 2"]
    if dim == 1:
        lines.append("set title 'type and strategy distributions'")
        parts = []
        for k in range(1, len(mu_list) + 1):
            parts.append(f"$mu{k} using 1:2 with lines lc rgb 'blue' {styles[k - 1]} title 'mu{k}'")
        for k in range(1, len(nus) + 1):
            parts.append(f"$nu{k} using 1:2 with lines lc rgb 'red' {styles[k - 1]} title 'nu{k}'")
        lines.append("plot " + ", \\\n     ".join(parts))
        lines.append("set title 'support of gamma'")
        lines.append("set xlabel 'x'; set ylabel 'y'")
        parts = [f"$gamma{k} using 3:4 with points pt 7 ps 0.3 title 'gamma{k}'"
                 for k in range(1, len(supports) + 1)]
        lines.append("plot " + ", \\\n     ".join(parts))
    else:
        lines.append("set view map; set size square")
        lines.append("set title 'mu'")
        lines.append("splot $mu1 using 1:2:3 with points pt 5 ps 0.5 palette notitle")
        lines.append("set title 'nu'")
        lines.append("splot $nu1 using 1:2:3 with points pt 5 ps 0.5 palette notitle")
    lines.append("unset multiplot")
    return "\n".join(lines) + "\n"


def emit_single(out: Path, problem, report, cfg: RunConfig, wall_time: float):
    out.mkdir(parents=True, exist_ok=True)
    X, Y = problem.X, problem.Y
    write_measure(out / "mu.csv", X, problem.mu.weights, index="i", coord="x")
    write_measure(out / "nu.csv", Y, report.nu.weights)
    rows = support_rows(report.gamma, X, Y, cfg.gamma_threshold)
    header = ["i", "j"] + _coord_names("x", X.dim) + _coord_names("y", Y.dim) + ["mass"]
    write_csv(out / "gamma_support.csv", header, rows)
    write_trace(out / "trace.csv", report.trace)
    write_report(out / "report.json", report, cfg, wall_time)
    (out / "plot.gp").write_text(plot_script(X, problem.mu.weights, [report.nu.weights], [rows]))


def emit_two(out: Path, spec, report, cfg: RunConfig, wall_time: float):
    out.mkdir(parents=True, exist_ok=True)
    p1, p2 = spec.pop1, spec.pop2
    X, Y = p1.X, p1.Y
    write_measure(out / "mu.csv", X, p1.mu.weights, index="i", coord="x")
    write_measure(out / "mu2.csv", p2.X, p2.mu.weights, index="i", coord="x")
    write_measure(out / "nu.csv", Y, report.nu1.weights)
    write_measure(out / "nu2.csv", Y, report.nu2.weights)
    header = ["i", "j"] + _coord_names("x", X.dim) + _coord_names("y", Y.dim) + ["mass"]
    rows1 = support_rows(report.gamma1, X, Y, cfg.gamma_threshold)
    rows2 = support_rows(report.gamma2, p2.X, Y, cfg.gamma_threshold)
    write_csv(out / "gamma_support.csv", header, rows1)
    write_csv(out / "gamma2_support.csv", header, rows2)
    write_trace(out / "trace.csv", report.trace)
    write_report(out / "report.json", report, cfg, wall_time)
    (out / "plot.gp").write_text(plot_script(
        X, [p1.mu.weights, p2.mu.weights], [report.nu1.weights, report.nu2.weights], [rows1, rows2]))
