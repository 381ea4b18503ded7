"""Generalised Dykstra splitting for KL proximal problems.

Computes prox_G(kernel) for G = G_1 + ... + G_L by cycling through the
individual prox maps with multiplicative corrections.  In log coordinates, step
n takes the input ``log gamma + log z_l`` (z_l being the correction stored
for this prox one cycle earlier), applies the prox, and stores
``input - output`` as the new correction.  Hence
``log gamma + sum_l log z_l`` equals the log kernel at all times.

A state is a tuple of couplings (one per population); prox maps receive and
return that tuple, or a bare :class:`Coupling` when the kernel was passed as one.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidConfigError, ProxFailure
from .kl_core import Coupling, logsumexp


@dataclass(frozen=True)
class ProxStep:
    """One elementary prox map in a splitting.

    ``exact`` marks hard constraints; they run last in every cycle so the
    returned coupling satisfies them to rounding.  ``residual`` (optional)
    measures the constraint violation of a state in l1.
    """

    name: str
    apply: Callable
    exact: bool = False
    residual: Callable | None = None


@dataclass(frozen=True)
class DykstraConfig:
    tol_nu: float = 1e-7
    tol_marginal: float = 1e-8
    max_cycles: int = 20000
    trace_every: int = 1

    def __post_init__(self):
        if not (self.tol_nu > 0 and self.tol_marginal > 0):
            raise InvalidConfigError("Dykstra tolerances must be positive")
        if self.max_cycles < 1 or self.trace_every < 1:
            raise InvalidConfigError("max_cycles and trace_every must be >= 1")


@dataclass(frozen=True)
class TraceRow:
    cycle: int
    nu_change_l1: float
    marginal_residual_l1: float
    seconds: float


@dataclass
class DykstraResult:
    gamma: object
    cycles: int
    trace: list = field(default_factory=list)
    converged: bool = False
    nu_change: float = float("inf")
    marginal_residual: float = float("inf")
    prox_evaluations: int = 0
    corrections: list | None = None
    steps: tuple = ()


def _logs(state):
    if isinstance(state, Coupling):
        return (state.log,)
    return tuple(c.log for c in state)


def _wrap(logs, single):
    if single:
        return Coupling(logs[0])
    return tuple(Coupling(a) for a in logs)


def second_marginals(logs) -> np.ndarray:
    """Concatenated column sums of every block of a state (inf for unnormalised kernels is fine)."""
    with np.errstate(over="ignore"):
        return np.concatenate([np.exp(logsumexp(a, axis=0)) for a in logs])


def order_steps(proxes: Sequence[ProxStep]) -> tuple:
    """Stable reordering that moves exact constraints to the end of the cycle."""
    return tuple([p for p in proxes if not p.exact] + [p for p in proxes if p.exact])


def dykstra_solve(kernel, proxes: Sequence[ProxStep], cfg: DykstraConfig | None = None,
                  warm: DykstraResult | None = None, on_step: Callable | None = None
                  ) -> DykstraResult:
    """Run Dykstra cycles from ``kernel`` until the strategy marginals settle.

    Parameters
    ----------
    kernel : Coupling or tuple of Coupling
        Reference measure (strictly positive, stored in log domain).
    proxes : sequence of ProxStep
        Elementary prox maps; exact constraints are moved to the end of the cycle.
    cfg : DykstraConfig
    warm : DykstraResult, optional
        Starting coupling and corrections, as produced by :func:`warm_start`.
        When given, ``kernel`` is only used to decide the state layout.
    on_step : callable, optional
        ``on_step(n, step, before_logs, z_old, after_logs, z_new)`` hook, for
        inspection in tests.

    Returns
    -------
    DykstraResult
        Non-convergence within ``max_cycles`` is reported through
        ``converged=False``, not raised.
    """
    cfg = cfg or DykstraConfig()
    if len(proxes) == 0:
        raise InvalidConfigError("need at least one prox map")
    single = isinstance(kernel, Coupling)
    steps = order_steps(proxes)
    L = len(steps)
    t0 = time.perf_counter()

    if warm is not None:
        state = _logs(warm.gamma)
        corr = [tuple(z) for z in warm.corrections]
        if len(corr) != L:
            raise InvalidConfigError("warm start has a different number of prox maps")
    else:
        state = _logs(kernel)
        corr = [tuple(np.zeros_like(a) for a in state) for _ in range(L)]

    nu_prev = second_marginals(state)
    trace = []
    result = DykstraResult(gamma=None, cycles=0, steps=steps)
    n = 0
    max_cycles = 1 if L == 1 else cfg.max_cycles
    for cycle in range(1, max_cycles + 1):
        for l, step in enumerate(steps):
            n += 1
            with np.errstate(invalid="ignore"):
                inp = tuple(a + z for a, z in zip(state, corr[l]))
            try:
                out = _logs(step.apply(_wrap(inp, single)))
            except Exception as exc:
                raise ProxFailure(
                    f"prox {step.name!r} failed in cycle {cycle}: {exc}", cycle, step.name
                ) from exc
            with np.errstate(invalid="ignore"):
                new_z = tuple(np.nan_to_num(i - o, nan=0.0) for i, o in zip(inp, out))
            if on_step is not None:
                on_step(n, step, state, corr[l], out, new_z)
            corr[l] = new_z
            state = out

        nu = second_marginals(state)
        change = float(np.sum(np.abs(nu - nu_prev)))
        nu_prev = nu
        mres = 0.0
        for step in steps:
            if step.residual is not None:
                mres = max(mres, float(step.residual(_wrap(state, single))))
        # a single prox is exact after one application
        done = (change <= cfg.tol_nu or L == 1) and mres <= cfg.tol_marginal
        if cycle % cfg.trace_every == 0 or done or cycle == max_cycles:
            trace.append(TraceRow(cycle, change, mres, time.perf_counter() - t0))
        result.cycles = cycle
        result.nu_change = 0.0 if L == 1 else change
        result.marginal_residual = mres
        if done:
            result.converged = True
            break

    result.gamma = _wrap(state, single)
    result.trace = trace
    result.prox_evaluations = n
    result.corrections = corr
    return result


def warm_start(previous: DykstraResult, old_kernel, new_kernel) -> DykstraResult:
    """Re-target a finished run at a new kernel without discarding its dual information.

    The returned object can be passed as ``warm`` to :func:`dykstra_solve`.
    The coupling is shifted by ``log new_kernel - log old_kernel`` and the
    corrections are kept, so the invariant
    ``log gamma + sum_l log z_l = log kernel`` holds for the new kernel.
    """
    single = isinstance(previous.gamma, Coupling)
    shifted = tuple(
        g + (kn - ko)
        for g, kn, ko in zip(_logs(previous.gamma), _logs(new_kernel), _logs(old_kernel))
    )
    return DykstraResult(
        gamma=_wrap(shifted, single),
        cycles=0,
        corrections=[tuple(z) for z in previous.corrections],
        steps=previous.steps,
    )
