"""Single-population solvers: implicit three-prox splitting and the semi-implicit outer loop."""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import diagnostics as dg
from .dykstra import DykstraConfig, ProxStep, TraceRow, dykstra_solve, warm_start
from .errors import InvalidConfigError
from .kl_core import Coupling, gibbs_kernel, logsumexp
from .model import DiscreteSpace, ProbabilityVector, ProblemSpec
from .prox_ops import (
    NewtonConfig,
    SplitCongestion,
    prox_congestion,
    prox_first_marginal,
    prox_interaction_energy,
)

log = logging.getLogger(__name__)

SCHEMES = ("implicit", "semi_implicit")


@dataclass(frozen=True)
class SchemeConfig:
    scheme: str = "semi_implicit"
    outer_tol: float = 1e-8
    max_outer: int = 5000
    dykstra: DykstraConfig = field(default_factory=DykstraConfig)
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    stall_window: int = 50

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise InvalidConfigError(f"unknown scheme {self.scheme!r}")
        if not self.outer_tol > 0 or self.max_outer < 1:
            raise InvalidConfigError("outer_tol must be > 0 and max_outer >= 1")

    def inner(self) -> DykstraConfig:
        """Inner tolerance kept an order below the outer one so outer changes are meaningful."""
        return replace(self.dykstra, tol_nu=min(self.dykstra.tol_nu, 0.1 * self.outer_tol))


@dataclass
class SolveReport:
    nu: ProbabilityVector
    gamma: Coupling
    scheme: str
    converged: bool
    outer_iterations: int
    cycles: int
    prox_evaluations: int
    proxes_per_cycle: int
    nu_change: float
    marginal_residual: float
    gibbs_residual: float
    objective: float
    exploitability: float
    concentration: float
    wall_time: float
    trace: list = field(default_factory=list)
    outer_trace: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    stop_reason: str = ""

    def summary(self) -> dict:
        return {
            "scheme": self.scheme,
            "converged": self.converged,
            "stop_reason": self.stop_reason,
            "outer_iterations": self.outer_iterations,
            "cycles": self.cycles,
            "prox_evaluations": self.prox_evaluations,
            "proxes_per_cycle": self.proxes_per_cycle,
            "nu_change": self.nu_change,
            "marginal_residual": self.marginal_residual,
            "gibbs_residual": self.gibbs_residual,
            "objective": self.objective,
            "exploitability": self.exploitability,
            "concentration": self.concentration,
            "wall_time": self.wall_time,
            "notes": list(self.notes),
        }


# -- helpers shared with the two-population solver -------------------------------


def restrict_support(problem: ProblemSpec):
    """Drop types with zero weight; returns (reduced problem, row mask or None)."""
    w = problem.mu.weights
    rows = w > 0
    if rows.all():
        return problem, None
    X = DiscreteSpace(problem.X.points[rows])
    reduced = problem.replace(
        X=X,
        mu=ProbabilityVector(X, w[rows]),
        cost=type(problem.cost)(problem.cost.values[rows]),
    )
    return reduced, rows


def expand_rows(gamma: Coupling, rows, n_rows) -> Coupling:
    if rows is None:
        return gamma
    full = np.full((n_rows, gamma.shape[1]), -np.inf)
    full[rows] = gamma.log
    return Coupling(full)


def first_marginal_step(mu, name="marginal") -> ProxStep:
    w = np.asarray(mu.weights)
    return ProxStep(
        name,
        lambda g: prox_first_marginal(g, w),
        exact=True,
        residual=lambda g: dg.first_marginal_residual(g, w),
    )


def congestion_step(g, epsilon, tol, name="congestion") -> ProxStep:
    return ProxStep(name, lambda th: prox_congestion(th, g, epsilon, tol))


def _nu_from(gamma: Coupling):
    return np.exp(logsumexp(gamma.log, axis=0))


def _finish(problem, gamma, *, scheme, converged, outer, cycles, evals, per_cycle, change,
            t0, trace, outer_trace, notes, stop_reason) -> SolveReport:
    nu = _nu_from(gamma)
    log_nu = logsumexp(gamma.log, axis=0)
    psi = dg.total_cost(problem, log_nu=log_nu)
    return SolveReport(
        nu=ProbabilityVector.normalized(problem.Y, nu),
        gamma=gamma,
        scheme=scheme,
        converged=converged,
        outer_iterations=outer,
        cycles=cycles,
        prox_evaluations=evals,
        proxes_per_cycle=per_cycle,
        nu_change=change,
        marginal_residual=dg.first_marginal_residual(gamma, problem.mu),
        gibbs_residual=dg.gibbs_residual_from_cost(gamma, psi, problem.mu, problem.epsilon),
        objective=dg.plan_objective(gamma, problem),
        exploitability=dg.exploitability(gamma, psi, problem.mu),
        concentration=dg.concentration_diagnostic(gamma, problem.mu),
        wall_time=time.perf_counter() - t0,
        trace=trace,
        outer_trace=outer_trace,
        notes=notes,
        stop_reason=stop_reason,
    )


# -- implicit -----------------------------------------------------------------------


def implicit_steps(problem: ProblemSpec, cfg: SchemeConfig):
    """[G2 (quadratic + interaction), G3 (remaining congestion H), G1 (marginal)] plus notes."""
    notes = []
    if problem.congestion.kind == "log_barrier":
        raise InvalidConfigError("log_barrier congestion is only supported by the semi-implicit scheme")
    phi = problem.interaction
    if not phi.satisfies_norminter:
        msg = f"sum phi^2 = {phi.frobenius_sq:.4g} >= 1: convexity of the energy is not guaranteed"
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
        notes.append(msg)
    h = SplitCongestion(problem.congestion)
    if not h.convex:
        msg = "F(t) - t^2/2 is not convex on [0, 1]; the implicit splitting may be invalid"
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
        notes.append(msg)
    eps = problem.epsilon
    tol = cfg.newton.tol
    steps = [
        ProxStep("interaction",
                 lambda th: prox_interaction_energy(th, phi, eps, cfg.newton, warn=False)),
        congestion_step(h, eps, tol, "congestion_remainder"),
        first_marginal_step(problem.mu),
    ]
    return steps, notes


def solve_implicit(problem: ProblemSpec, cfg: SchemeConfig | None = None) -> SolveReport:
    """Fully implicit splitting, valid when the energy is convex."""
    cfg = cfg or SchemeConfig(scheme="implicit")
    t0 = time.perf_counter()
    n_rows = len(problem.X)
    reduced, rows = restrict_support(problem)
    steps, notes = implicit_steps(reduced, cfg)
    kernel = gibbs_kernel(reduced.cost, reduced.potential, reduced.epsilon)
    # same certificate rule as the outer loop: restart warm with a tighter tolerance
    loop = OuterLoop(cfg)
    res = None
    stop = "max_cycles"
    while True:
        warm = None if res is None else warm_start(res, kernel, kernel)
        res = dykstra_solve(kernel, steps, loop.inner, warm=warm)
        loop.record_inner(res)
        if not res.converged:
            notes.append(f"Dykstra stopped after {loop.cycles} cycles without converging")
            break
        reason = loop.step(0.0, lambda: dg.gibbs_residual(res.gamma, reduced))
        if reason is not None:
            stop = reason
            break
    if stop == "uncertified":
        notes.append("Gibbs certificate not reached at the tightest inner tolerance")
    if loop.tightened:
        notes.append(f"inner tolerance tightened {loop.tightened} time(s) to reach the Gibbs certificate")
    gamma = expand_rows(res.gamma, rows, n_rows)
    return _finish(problem, gamma, scheme="implicit", converged=stop == "converged", outer=1,
                   cycles=loop.cycles, evals=loop.evals, per_cycle=len(steps),
                   change=res.nu_change, t0=t0, trace=loop.trace, outer_trace=[],
                   notes=notes, stop_reason=stop)


# -- semi-implicit ------------------------------------------------------------------


TOL_FLOOR = 1e-15


class OuterLoop:
    """Bookkeeping for linearised outer iterations: stopping, stall detection and traces.

    A small outer change only counts as convergence once the Gibbs
    certificate is below ``10 * outer_tol``; otherwise the inner tolerance is
    tightened a hundredfold and iteration continues.
    """

    def __init__(self, cfg: SchemeConfig):
        self.cfg = cfg
        self.inner = cfg.inner()
        self.tightened = 0
        self.certificate = np.nan
        self.best = np.inf
        self.since_best = 0
        self.trace = []
        self.outer_trace = []
        self.cycles = 0
        self.evals = 0
        self.t0 = time.perf_counter()
        self.inner_converged = True

    def record_inner(self, res):
        offset = time.perf_counter() - self.t0 - (res.trace[-1].seconds if res.trace else 0.0)
        for row in res.trace:
            self.trace.append(TraceRow(self.cycles + row.cycle, row.nu_change_l1,
                                       row.marginal_residual_l1, offset + row.seconds))
        self.cycles += res.cycles
        self.evals += res.prox_evaluations
        self.inner_converged = res.converged

    def step(self, change, certificate=None):
        """Returns a stop reason or None; ``certificate()`` gives the current Gibbs residual."""
        self.outer_trace.append(change)
        if change <= self.cfg.outer_tol:
            if not self.inner_converged:
                return "inner_not_converged"
            if certificate is not None:
                self.certificate = certificate()
                if self.certificate > 10 * self.cfg.outer_tol:
                    if self.inner.tol_nu <= TOL_FLOOR:
                        return "uncertified"
                    self.inner = replace(self.inner, tol_nu=max(0.01 * self.inner.tol_nu, TOL_FLOOR))
                    self.tightened += 1
                    return None
            return "converged"
        if change < self.best:
            self.best = change
            self.since_best = 0
        else:
            self.since_best += 1
            if self.since_best >= self.cfg.stall_window:
                return "stalled"
        return None


def solve_semi_implicit(problem: ProblemSpec, cfg: SchemeConfig | None = None) -> SolveReport:
    """Linearise the interaction at the current nu and solve the convex remainder by Dykstra.

    Each outer step multiplies the Gibbs kernel column-wise by
    exp(-V_j / eps) with V = phi nu and runs the two-prox splitting
    [congestion, first marginal], warm-started from the previous step.
    """
    cfg = cfg or SchemeConfig()
    t0 = time.perf_counter()
    n_rows = len(problem.X)
    reduced, rows = restrict_support(problem)
    eps = reduced.epsilon
    steps = [congestion_step(reduced.congestion, eps, cfg.newton.tol), first_marginal_step(reduced.mu)]
    base = gibbs_kernel(reduced.cost, reduced.potential, eps)
    phi = reduced.interaction.values

    loop = OuterLoop(cfg)
    nu = np.full(len(reduced.Y), 1.0 / len(reduced.Y))
    res = None
    kernel = None
    stop = "max_outer"
    change = np.inf
    outer = 0
    for outer in range(1, cfg.max_outer + 1):
        new_kernel = Coupling(base.log - (phi @ nu)[None, :] / eps)
        warm = None if res is None else warm_start(res, kernel, new_kernel)
        res = dykstra_solve(new_kernel, steps, loop.inner, warm=warm)
        kernel = new_kernel
        loop.record_inner(res)
        nu_new = _nu_from(res.gamma)
        change = float(np.sum(np.abs(nu_new - nu)))
        nu = nu_new
        log.debug("outer %d: change %.3e after %d cycles", outer, change, res.cycles)
        reason = loop.step(change, lambda: dg.gibbs_residual(res.gamma, reduced))
        if reason is not None:
            stop = reason
            break
    gamma = expand_rows(res.gamma, rows, n_rows)
    notes = [] if stop == "converged" else [f"semi-implicit loop stopped: {stop}"]
    if loop.tightened:
        notes.append(f"inner tolerance tightened {loop.tightened} time(s) to reach the Gibbs certificate")
    return _finish(problem, gamma, scheme="semi_implicit", converged=stop == "converged",
                   outer=outer, cycles=loop.cycles, evals=loop.evals, per_cycle=len(steps),
                   change=change, t0=t0, trace=loop.trace, outer_trace=loop.outer_trace,
                   notes=notes, stop_reason=stop)


def solve(problem: ProblemSpec, cfg: SchemeConfig | None = None) -> SolveReport:
    cfg = cfg or SchemeConfig()
    if cfg.scheme == "implicit":
        return solve_implicit(problem, cfg)
    return solve_semi_implicit(problem, cfg)
