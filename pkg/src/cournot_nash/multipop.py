"""Two populations sharing a strategy grid and a congestion cost F(nu1 + nu2).

Interaction energies are linearised at every outer step, as in the
single-population semi-implicit scheme.  Each population's energy is taken
without the 1/2 in front of the quadratic form, E_l = sum phi_kj nu_k nu_j,
so its linearisation is V = 2 phi nu (``interaction_factor``).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import diagnostics as dg
from .dykstra import ProxStep, dykstra_solve, warm_start
from .errors import CournotNashError
from .kl_core import Coupling, gibbs_kernel, logsumexp
from .model import ProbabilityVector, TwoPopulationSpec
from .prox_ops import prox_congestion, prox_first_marginal, prox_shared_congestion
from .schemes import OuterLoop, SchemeConfig, expand_rows, restrict_support


@dataclass
class PopulationDiagnostics:
    marginal_residual: float
    gibbs_residual: float
    exploitability: float
    concentration: float


@dataclass
class SolveReport2:
    nu1: ProbabilityVector
    nu2: ProbabilityVector
    gamma1: Coupling
    gamma2: Coupling
    converged: bool
    outer_iterations: int
    cycles: int
    prox_evaluations: int
    proxes_per_cycle: int
    nu_change: float
    objective: float
    overlap: float
    pop1: PopulationDiagnostics
    pop2: PopulationDiagnostics
    wall_time: float
    trace: list = field(default_factory=list)
    outer_trace: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    stop_reason: str = ""

    @property
    def gibbs_residual(self) -> float:
        return max(self.pop1.gibbs_residual, self.pop2.gibbs_residual)

    @property
    def marginal_residual(self) -> float:
        return max(self.pop1.marginal_residual, self.pop2.marginal_residual)

    def summary(self) -> dict:
        return {
            "scheme": "semi_implicit",
            "converged": self.converged,
            "stop_reason": self.stop_reason,
            "outer_iterations": self.outer_iterations,
            "cycles": self.cycles,
            "prox_evaluations": self.prox_evaluations,
            "proxes_per_cycle": self.proxes_per_cycle,
            "nu_change": self.nu_change,
            "objective": self.objective,
            "overlap": self.overlap,
            "marginal_residual": self.marginal_residual,
            "gibbs_residual": self.gibbs_residual,
            "pop1": vars(self.pop1).copy(),
            "pop2": vars(self.pop2).copy(),
            "wall_time": self.wall_time,
            "notes": list(self.notes),
        }


class PopulationError(CournotNashError):
    def __init__(self, message, population):
        super().__init__(f"population {population}: {message}")
        self.population = population


def _on(k, fn):
    """Lift a single-coupling map to block ``k`` of a pair."""

    def apply(state):
        out = list(state)
        out[k] = fn(state[k])
        return tuple(out)

    return apply


def _steps(p1, p2, shared, tol):
    steps = []
    for k, pop in enumerate((p1, p2)):
        if not pop.congestion.is_zero:
            g, eps = pop.congestion, pop.epsilon
            steps.append(ProxStep(f"congestion{k + 1}",
                                  _on(k, lambda th, g=g, eps=eps: prox_congestion(th, g, eps, tol))))
    e1, e2 = p1.epsilon, p2.epsilon
    steps.append(ProxStep(
        "shared_congestion",
        lambda s: prox_shared_congestion(s[0], s[1], shared, e1, e2, tol),
    ))
    for k, pop in enumerate((p1, p2)):
        w = np.asarray(pop.mu.weights)
        steps.append(ProxStep(
            f"marginal{k + 1}",
            _on(k, lambda th, w=w: prox_first_marginal(th, w)),
            exact=True,
            residual=lambda s, k=k, w=w: dg.first_marginal_residual(s[k], w),
        ))
    return steps


def _diagnostics(pop, gamma, shared_term, factor):
    log_nu = logsumexp(gamma.log, axis=0)
    psi = dg.total_cost(pop, log_nu=log_nu, interaction_factor=factor, extra=shared_term)
    return PopulationDiagnostics(
        marginal_residual=dg.first_marginal_residual(gamma, pop.mu),
        gibbs_residual=dg.gibbs_residual_from_cost(gamma, psi, pop.mu, pop.epsilon),
        exploitability=dg.exploitability(gamma, psi, pop.mu),
        concentration=dg.concentration_diagnostic(gamma, pop.mu),
    )


def _shared_term(shared, log_nus):
    if shared.is_zero:
        return np.zeros(log_nus[0].shape)
    return shared.derivative_log(np.logaddexp(*log_nus))


def _pair_residual(p1, p2, shared, gammas, factor):
    log_nus = [logsumexp(g.log, axis=0) for g in gammas]
    g_sigma = _shared_term(shared, log_nus)
    out = 0.0
    for p, g, ln in zip((p1, p2), gammas, log_nus):
        psi = dg.total_cost(p, log_nu=ln, interaction_factor=factor, extra=g_sigma)
        out = max(out, dg.gibbs_residual_from_cost(g, psi, p.mu, p.epsilon))
    return out


def solve_two_populations(spec: TwoPopulationSpec, cfg: SchemeConfig | None = None,
                          interaction_factor: float = 2.0) -> SolveReport2:
    """Block Dykstra over (gamma1, gamma2) inside a semi-implicit outer loop.

    Per outer step, each population's kernel absorbs its potential and the
    linearised interaction ``interaction_factor * phi_l nu_l``; the splitting is
    [own congestion (if any), shared congestion, first marginals].
    """
    cfg = cfg or SchemeConfig()
    t0 = time.perf_counter()
    pops = (spec.pop1, spec.pop2)
    reduced = [restrict_support(p) for p in pops]
    p1, p2 = reduced[0][0], reduced[1][0]
    steps = _steps(p1, p2, spec.shared_congestion, cfg.newton.tol)
    bases = [gibbs_kernel(p.cost, p.potential, p.epsilon) for p in (p1, p2)]
    nJ = len(p1.Y)
    nus = [np.full(nJ, 1.0 / nJ), np.full(nJ, 1.0 / nJ)]
    loop = OuterLoop(cfg)
    res = kernel = None
    stop = "max_outer"
    change = np.inf
    outer = 0
    for outer in range(1, cfg.max_outer + 1):
        new_kernel = tuple(
            Coupling(b.log - (interaction_factor * (p.interaction.values @ nu))[None, :] / p.epsilon)
            for b, p, nu in zip(bases, (p1, p2), nus)
        )
        warm = None if res is None else warm_start(res, kernel, new_kernel)
        try:
            res = dykstra_solve(new_kernel, steps, loop.inner, warm=warm)
        except CournotNashError as exc:
            name = getattr(exc, "prox_name", "")
            if name and name[-1] in "12":
                raise PopulationError(str(exc), int(name[-1])) from exc
            raise
        kernel = new_kernel
        loop.record_inner(res)
        new = [np.exp(logsumexp(g.log, axis=0)) for g in res.gamma]
        change = float(np.sum(np.abs(new[0] - nus[0])) + np.sum(np.abs(new[1] - nus[1])))
        nus = new
        reason = loop.step(change, lambda: _pair_residual(p1, p2, spec.shared_congestion,
                                                          res.gamma, interaction_factor))
        if reason is not None:
            stop = reason
            break

    gammas = [expand_rows(g, r[1], len(p.X)) for g, r, p in zip(res.gamma, reduced, pops)]
    log_nus = [logsumexp(g.log, axis=0) for g in gammas]
    nu1, nu2 = (np.exp(x) for x in log_nus)
    shared = spec.shared_congestion
    sigma = nu1 + nu2
    g_sigma = _shared_term(shared, log_nus)
    diag = [_diagnostics(p, g, g_sigma, interaction_factor) for p, g in zip(pops, gammas)]
    objective = (
        sum(dg.plan_objective(g, p, interaction_factor / 2) for g, p in zip(gammas, pops))
        + float(np.sum(shared.energy(sigma)))
    )
    notes = [] if stop == "converged" else [f"two-population loop stopped: {stop}"]
    if loop.tightened:
        notes.append(f"inner tolerance tightened {loop.tightened} time(s) to reach the Gibbs certificate")
    return SolveReport2(
        nu1=ProbabilityVector.normalized(spec.pop1.Y, nu1),
        nu2=ProbabilityVector.normalized(spec.pop2.Y, nu2),
        gamma1=gammas[0],
        gamma2=gammas[1],
        converged=stop == "converged",
        outer_iterations=outer,
        cycles=loop.cycles,
        prox_evaluations=loop.evals,
        proxes_per_cycle=len(steps),
        nu_change=change,
        objective=objective,
        overlap=dg.overlap(nu1, nu2),
        pop1=diag[0],
        pop2=diag[1],
        wall_time=time.perf_counter() - t0,
        trace=loop.trace,
        outer_trace=loop.outer_trace,
        notes=notes,
        stop_reason=stop,
    )
