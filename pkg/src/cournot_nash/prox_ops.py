"""KL proximal maps of the elementary functionals and their scalar/vector solvers.

All maps act on log-domain couplings.  Except for the fixed-marginal
projections, every prox rescales the columns of its input: the new column
masses nu_j are found by solving a monotone equation written in the
log-ratio variable ``w_j = ln(nu_j / S_j)``, where ``S_j`` is the input column
mass.  Working with ``w`` instead of ``nu`` keeps the residual free of
cancellation when ``S_j`` underflows the linear domain.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InfeasibleProxError, NewtonNonconvergenceError, RootNotBracketedError
from .kl_core import Coupling, logsumexp
from .model import CongestionSpec, InteractionMatrix


# -- congestion derivatives in log coordinates -------------------------------


class SplitCongestion:
    """h(t) = f(t) - t, the remainder of F after removing the 1-strongly convex part t^2/2."""

    def __init__(self, spec: CongestionSpec):
        self.spec = spec
        # bracketing Newton still applies when h decreases somewhere
        self.monotone = True
        self.convex = is_nondecreasing(self)

    def derivative_log(self, u):
        return self.spec.derivative_log(u) - np.exp(u)

    def log_slope(self, u):
        return self.spec.log_slope(u) - np.exp(u)

    @property
    def is_zero(self):
        return False


class CallableDerivative:
    """Adapter for a plain callable g(t); the derivative defaults to a central difference."""

    def __init__(self, g: Callable, g_prime: Callable | None = None, monotone: bool = True):
        self.g = g
        self.g_prime = g_prime
        self.monotone = monotone

    @property
    def is_zero(self):
        return False

    def derivative_log(self, u):
        return np.asarray(self.g(np.exp(u)), dtype=float)

    def log_slope(self, u):
        t = np.exp(u)
        if self.g_prime is not None:
            return t * np.asarray(self.g_prime(t), dtype=float)
        h = 1e-6
        return (np.asarray(self.g(t * np.exp(h))) - np.asarray(self.g(t * np.exp(-h)))) / (2 * h)


def as_derivative(g):
    if isinstance(g, (CongestionSpec, SplitCongestion, CallableDerivative)):
        return g
    if callable(g):
        return CallableDerivative(g)
    raise TypeError(f"cannot interpret {g!r} as a congestion derivative")


def is_nondecreasing(g, upper: float = 1.0, n: int = 2001) -> bool:
    """Sampled check that t f'(t) >= 0 on (0, upper]."""
    u = np.log(np.linspace(upper / n, upper, n))
    return bool(np.all(as_derivative(g).log_slope(u) >= -1e-12))


# -- scalar equations ---------------------------------------------------------


@dataclass(frozen=True)
class ScalarRootProblem:
    """nu = s * exp(-g(nu) / epsilon) for a nondecreasing g."""

    s: float
    epsilon: float
    g: object

    def __post_init__(self):
        if not self.s > 0 or not self.epsilon > 0:
            raise ValueError("s and epsilon must be positive")


def _solve_increasing(fn, n, tol, maxiter=200, expand=500):
    """Vectorised safeguarded Newton for increasing residuals r(w) = 0.

    ``fn(w)`` returns ``(r, dr)``.  The bracket starts at [-1, 0] and is
    expanded geometrically (factor 4, enough to reach ~1e300 for huge
    cost/epsilon ratios).  Newton steps that leave the bracket or fail to halve
    the previous step are replaced by bisection, and roots that still miss
    ``tol`` after ``maxiter`` steps raise NewtonNonconvergenceError.
    """
    lo = np.full(n, -1.0)
    hi = np.zeros(n)
    step = np.ones(n)
    r_hi, _ = fn(hi)
    for _ in range(expand):
        bad = ~(r_hi >= 0)
        if not bad.any():
            break
        lo = np.where(bad, hi, lo)
        hi = np.where(bad, hi + step, hi)
        step = np.where(bad, 4 * step, step)
        r_hi, _ = fn(hi)
    else:
        raise RootNotBracketedError("could not find an upper bracket")
    step = np.ones(n)
    r_lo, _ = fn(lo)
    for _ in range(expand):
        bad = ~(r_lo <= 0)
        if not bad.any():
            break
        hi = np.where(bad, lo, hi)
        lo = np.where(bad, lo - step, lo)
        step = np.where(bad, 4 * step, step)
        r_lo, _ = fn(lo)
    else:
        raise RootNotBracketedError("could not find a lower bracket")

    # rtsafe-style safeguard: bisect when Newton leaves the bracket or fails to
    # halve the previous step (slow from the steep side of exponential residuals)
    w = hi.copy()
    r, dr = fn(w)
    dx_old = hi - lo
    done = np.zeros(n, dtype=bool)
    for _ in range(maxiter):
        width_ok = (hi - lo) <= 4e-16 * np.maximum(1.0, np.abs(w))
        done = (np.abs(r) <= tol) | width_ok
        if done.all():
            break
        hi = np.where(r > 0, w, hi)
        lo = np.where(r < 0, w, lo)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = w - r / dr
            fast = np.abs(2.0 * r) <= np.abs(dx_old * dr)
        ok = np.isfinite(newton) & (newton > lo) & (newton < hi) & fast
        nxt = np.where(ok, newton, 0.5 * (lo + hi))
        dx_old = np.where(done, dx_old, np.abs(nxt - w))
        w = np.where(done, w, nxt)
        r, dr = fn(w)
    else:
        done = (np.abs(r) <= tol) | ((hi - lo) <= 4e-16 * np.maximum(1.0, np.abs(w)))
    if not done.all():
        worst = float(np.max(np.abs(r[~done])))
        raise NewtonNonconvergenceError(
            f"scalar root solve stalled at residual {worst:.3e}", w, worst)
    # one more Newton step from |r| <= tol lands at rounding level, so prox
    # outputs do not carry tol-sized noise into Dykstra's stopping test
    with np.errstate(divide="ignore", invalid="ignore"):
        polish = w - r / dr
    ok = np.isfinite(polish) & (r != 0)
    if ok.any():
        r2, dr2 = fn(np.where(ok, polish, w))
        better = ok & (np.abs(r2) < np.abs(r))
        w = np.where(better, polish, w)
        r = np.where(better, r2, r)
    return w, r


def _smallest_root(fn, n, tol, span=64.0, samples=4097):
    """Smallest root of a residual that is positive as w -> -inf (non-monotone case)."""
    grid = np.linspace(-span, 0.0, samples)
    vals = np.stack([fn(np.full(n, x))[0] for x in grid])
    crossing = (vals[:-1] > 0) & (vals[1:] <= 0)
    if not crossing.any(axis=0).all():
        raise RootNotBracketedError(
            "residual has no sign change; the decreasing congestion derivative admits no root"
        )
    first = np.argmax(crossing, axis=0)
    a, b = grid[first], grid[first + 1]
    for _ in range(200):
        m = 0.5 * (a + b)
        fm = fn(m)[0]
        if np.all((np.abs(fm) <= tol) | (b - a < 1e-15)):
            break
        a = np.where(fm > 0, m, a)
        b = np.where(fm > 0, b, m)
    return m, fm


def _congestion_log_ratio(log_s, g, epsilon, tol):
    """Solve w + g(S e^w) / eps = 0 columnwise; columns with S = 0 get w = 0."""
    g = as_derivative(g)
    w = np.zeros_like(log_s)
    live = np.isfinite(log_s)
    if not live.any() or getattr(g, "is_zero", False):
        return w, np.zeros_like(log_s)
    ls = log_s[live]

    def fn(x):
        u = ls + x
        return x + g.derivative_log(u) / epsilon, 1.0 + g.log_slope(u) / epsilon

    with np.errstate(over="ignore", invalid="ignore"):
        if getattr(g, "monotone", True):
            sol, res = _solve_increasing(fn, ls.size, tol)
        else:
            sol, res = _smallest_root(fn, ls.size, tol)
    w[live] = sol
    resid = np.zeros_like(log_s)
    resid[live] = res
    return w, resid


def solve_monotone_scalar(problem: ScalarRootProblem, tol: float = 1e-12) -> float:
    """Root of ln(nu) + g(nu)/eps - ln(s) = 0; lies in (0, s] when g >= 0."""
    w, _ = _congestion_log_ratio(np.array([np.log(problem.s)]), problem.g, problem.epsilon, tol)
    return float(problem.s * np.exp(w[0]))


# -- prox maps ----------------------------------------------------------------


def _weights(m):
    return np.asarray(getattr(m, "weights", m), dtype=float)


def _project_axis(theta: Coupling, target, axis):
    lse = logsumexp(theta.log, axis=axis)
    t = _weights(target)
    if np.any((t > 0) & ~np.isfinite(lse)):
        raise InfeasibleProxError("an empty line must carry positive mass")
    with np.errstate(divide="ignore"):
        shift = np.log(t) - np.where(np.isfinite(lse), lse, 0.0)
    if axis == 1:
        return Coupling(theta.log + shift[:, None])
    return Coupling(theta.log + shift[None, :])


def prox_first_marginal(theta: Coupling, mu) -> Coupling:
    """KL projection onto {Lambda_1 gamma = mu}: gamma_ij = mu_i theta_ij / sum_k theta_ik."""
    return _project_axis(theta, mu, axis=1)


def prox_second_marginal(theta: Coupling, nu) -> Coupling:
    """Column counterpart of :func:`prox_first_marginal`."""
    return _project_axis(theta, nu, axis=0)


def prox_congestion(theta: Coupling, g, epsilon: float, tol: float = 1e-11,
                    return_residual: bool = False):
    """KL prox of (1/eps) sum_j G(nu_j) with G' = g nondecreasing.

    Each new column mass solves nu_j = S_j exp(-g(nu_j)/eps), and column j of
    ``theta`` is scaled by nu_j / S_j.
    """
    log_s = logsumexp(theta.log, axis=0)
    w, resid = _congestion_log_ratio(log_s, g, epsilon, tol)
    out = Coupling(theta.log + w[None, :])
    if return_residual:
        return out, float(np.max(np.abs(resid)))
    return out


@dataclass(frozen=True)
class NewtonConfig:
    tol: float = 1e-11
    max_steps: int = 50
    max_halvings: int = 40


def _interaction_log_ratio(log_s, phi, epsilon, cfg):
    n = log_s.size
    # nu0 = S / (1 + |S|_1)
    w = np.full(n, -np.log1p(np.exp(logsumexp(log_s))))
    eye = np.eye(n)
    a = eye + phi

    def residual(x):
        nu = np.exp(log_s + x)
        return x + (nu + phi @ nu) / epsilon, nu

    r, nu = residual(w)
    rn = np.max(np.abs(r))
    for _ in range(cfg.max_steps):
        if rn <= cfg.tol:
            return w, rn
        jac = eye + a * (nu / epsilon)[None, :]
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError as exc:
            raise NewtonNonconvergenceError("singular Newton system", w, rn) from exc
        t = 1.0
        for _ in range(cfg.max_halvings):
            trial = w + t * step
            r_t, nu_t = residual(trial)
            rn_t = np.max(np.abs(r_t))
            if np.isfinite(rn_t) and rn_t < rn:
                break
            t *= 0.5
        else:
            if rn <= 10 * cfg.tol:
                return w, rn
            raise NewtonNonconvergenceError(
                f"damped Newton stalled at residual {rn:.3e}", np.exp(log_s + w), rn
            )
        w, r, nu, rn = trial, r_t, nu_t, rn_t
    if rn <= cfg.tol:
        return w, rn
    raise NewtonNonconvergenceError(
        f"Newton did not reach {cfg.tol:g} in {cfg.max_steps} steps (residual {rn:.3e})",
        np.exp(log_s + w),
        rn,
    )


def prox_interaction_energy(theta: Coupling, phi, epsilon: float,
                            newton_cfg: NewtonConfig | None = None, warn: bool = True,
                            return_residual: bool = False):
    """KL prox of (1/eps) [ 1/2 sum nu_j^2 + 1/2 nu . phi nu ] composed with Lambda_2.

    Solves ln nu_j + (nu_j + (phi nu)_j) / eps = ln S_j by damped Newton.
    """
    cfg = newton_cfg or NewtonConfig()
    if not isinstance(phi, InteractionMatrix):
        phi = InteractionMatrix(phi)
    if warn and not phi.satisfies_norminter:
        warnings.warn(
            f"sum phi^2 = {phi.frobenius_sq:.4g} >= 1; the interaction energy may be nonconvex",
            RuntimeWarning,
            stacklevel=2,
        )
    log_s = logsumexp(theta.log, axis=0)
    w, rn = _interaction_log_ratio(log_s, phi.values, epsilon, cfg)
    out = Coupling(theta.log + w[None, :])
    if return_residual:
        return out, float(rn)
    return out


def _shared_log_sigma(log_s1, log_s2, g, eps1, eps2, tol):
    g = as_derivative(g)
    log_l = np.logaddexp(log_s1, log_s2)
    n = log_l.size
    if getattr(g, "is_zero", False) or not np.isfinite(log_l).any():
        return np.zeros(n), np.zeros(n)
    live = np.isfinite(log_l)
    a1 = (log_s1 - np.where(live, log_l, 0.0))[live]
    a2 = (log_s2 - np.where(live, log_l, 0.0))[live]
    ll = log_l[live]

    def fn(x):
        u = ll + x
        gs = g.derivative_log(u)
        b1 = a1 - gs / eps1
        b2 = a2 - gs / eps2
        m = np.logaddexp(b1, b2)
        p1 = np.exp(b1 - m)
        p2 = np.exp(b2 - m)
        return x - m, 1.0 + g.log_slope(u) * (p1 / eps1 + p2 / eps2)

    with np.errstate(over="ignore", invalid="ignore"):
        sol, res = _solve_increasing(fn, ll.size, tol)
    gs = np.zeros(n)
    gs[live] = g.derivative_log(ll + sol)
    resid = np.zeros(n)
    resid[live] = res
    return gs, resid


def prox_shared_congestion(theta1: Coupling, theta2: Coupling, g, eps1: float, eps2: float,
                           tol: float = 1e-11, return_residual: bool = False):
    """Joint KL prox of F(nu1 + nu2) with weights eps1, eps2 on the two KL terms.

    With sigma_j = nu1_j + nu2_j solving
    sigma = S1 exp(-g(sigma)/eps1) + S2 exp(-g(sigma)/eps2), column j of
    theta_l is scaled by exp(-g(sigma_j)/eps_l).
    """
    ls1 = logsumexp(theta1.log, axis=0)
    ls2 = logsumexp(theta2.log, axis=0)
    gs, resid = _shared_log_sigma(ls1, ls2, g, eps1, eps2, tol)
    out = (Coupling(theta1.log - gs[None, :] / eps1), Coupling(theta2.log - gs[None, :] / eps2))
    if return_residual:
        return out, float(np.max(np.abs(resid)))
    return out
