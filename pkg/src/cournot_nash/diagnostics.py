"""Equilibrium certificates, objective evaluation and small-instance oracles."""

from __future__ import annotations

import itertools

import numpy as np

from .errors import (
    EvaluationError,
    OracleScopeError,
    PreconditionError,
    SinkhornNonconvergenceError,
)
from .kl_core import Coupling, logsumexp
from .model import ProblemSpec


def _w(m):
    return np.asarray(getattr(m, "weights", m), dtype=float)


def _log_nu(gamma: Coupling):
    return logsumexp(gamma.log, axis=0)


# -- costs ---------------------------------------------------------------------


def total_cost(problem: ProblemSpec, nu=None, *, log_nu=None, interaction_factor: float = 1.0,
               extra=None) -> np.ndarray:
    """Psi_ij[nu] = c_ij + f_j(nu_j) + factor * sum_k phi_kj nu_k + v_j (+ extra_j).

    ``interaction_factor`` is 1 for the energy with a 1/2 in front of the
    quadratic form and 2 for the form without it.  Pass ``log_nu`` instead of
    ``nu`` to evaluate singular congestion derivatives without underflow.
    """
    if log_nu is None:
        nu = _w(nu)
        with np.errstate(divide="ignore"):
            log_nu = np.log(nu)
    else:
        log_nu = np.asarray(log_nu, dtype=float)
        nu = np.exp(log_nu)
    cong = problem.congestion
    if cong.singular_at_zero and np.any(~np.isfinite(log_nu)):
        j = int(np.flatnonzero(~np.isfinite(log_nu))[0])
        raise EvaluationError(f"congestion derivative is singular at nu_{j} = 0 (strategy {j})")
    with np.errstate(over="ignore"):
        f = cong.derivative_log(log_nu) if not cong.is_zero else np.zeros_like(nu)
    column = f + interaction_factor * (problem.interaction.values @ nu) + problem.potential.values
    if extra is not None:
        column = column + np.asarray(extra, dtype=float)
    return problem.cost.values + column[None, :]


def energy(problem: ProblemSpec, nu, interaction_factor: float = 0.5) -> float:
    """E(nu) = sum F(nu_j) + factor * nu.phi.nu + v.nu (factor 1/2 by default)."""
    nu = _w(nu)
    return float(
        np.sum(problem.congestion.energy(nu))
        + interaction_factor * nu @ problem.interaction.values @ nu
        + problem.potential.values @ nu
    )


# -- equilibrium certificates -------------------------------------------------------


def first_marginal_residual(gamma: Coupling, mu) -> float:
    return float(np.sum(np.abs(np.exp(logsumexp(gamma.log, axis=1)) - _w(mu))))


def exploitability(gamma: Coupling, psi, mu) -> float:
    """Aggregate best-response gap sum_i [ sum_j gamma_ij Psi_ij - mu_i min_j Psi_ij ].

    Zero exactly when every charged (i, j) is a cost minimiser for type i.
    """
    mu = _w(mu)
    psi = np.asarray(psi, dtype=float)
    if first_marginal_residual(gamma, mu) > 1e-8:
        raise PreconditionError("gamma does not have first marginal mu")
    rows = mu > 0
    g = gamma.values[rows]
    p = psi[rows]
    gaps = np.sum(g * p, axis=1) - mu[rows] * np.min(p, axis=1)
    return float(max(np.sum(gaps), 0.0))


def gibbs_residual_from_cost(gamma: Coupling, psi, mu, epsilon: float,
                             return_normalizers: bool = False):
    """max_i || gamma_i. / mu_i - softmax(-Psi_i. / eps) ||_1 over rows with mu_i > 0."""
    mu = _w(mu)
    rows = mu > 0
    lg = gamma.log[rows]
    if np.any(~np.isfinite(lg)):
        raise EvaluationError("Gibbs residual is undefined for couplings with zero entries")
    logits = -np.asarray(psi, dtype=float)[rows] / epsilon
    lse = logsumexp(logits, axis=1)
    soft = np.exp(logits - lse[:, None])
    cond = np.exp(lg - np.log(mu[rows])[:, None])
    res = float(np.max(np.sum(np.abs(cond - soft), axis=1)))
    if return_normalizers:
        log_a = np.full(mu.shape, -np.inf)
        log_a[rows] = np.log(mu[rows]) - lse
        return res, log_a
    return res


def gibbs_residual(gamma: Coupling, problem: ProblemSpec, return_normalizers: bool = False):
    """Distance of gamma from the Gibbs form a_i exp(-Psi_ij[nu] / eps) with nu = Lambda_2 gamma."""
    psi = total_cost(problem, log_nu=_log_nu(gamma))
    return gibbs_residual_from_cost(gamma, psi, problem.mu, problem.epsilon, return_normalizers)


def concentration_diagnostic(gamma: Coupling, mu) -> float:
    """Mean conditional entropy sum_i mu_i H(gamma_i. / mu_i); zero for a pure equilibrium."""
    mu = _w(mu)
    rows = mu > 0
    lp = gamma.log[rows] - np.log(mu[rows])[:, None]
    p = np.exp(lp)
    plogp = np.where(p > 0, p * np.where(np.isfinite(lp), lp, 0.0), 0.0)
    return float(max(-np.sum(mu[rows] * np.sum(plogp, axis=1)), 0.0))


def overlap(nu1, nu2) -> float:
    return float(np.sum(np.minimum(_w(nu1), _w(nu2))))


# -- Sinkhorn -----------------------------------------------------------------------


def _entropic_value(c, lg, eps):
    g = np.exp(lg)
    safe = np.where(np.isfinite(lg), lg, 0.0)
    return np.sum(np.where(g > 0, g * (c + eps * (safe - 1.0)), 0.0), axis=(-2, -1))


def sinkhorn(cost, mu, nu, epsilon: float, tol: float = 1e-12, max_iter: int = 100_000):
    """Log-domain Sinkhorn for MK_eps(mu, nu).

    Zero-weight points on either side are dropped before iterating and come
    back as -inf rows/columns.

    Returns
    -------
    gamma : Coupling
    value : float
        c.gamma + eps * sum gamma (ln gamma - 1).
    duals : (ndarray, ndarray)
        Log scalings (f_i, g_j) with log gamma_ij = f_i + g_j - c_ij / eps.
    """
    c = np.asarray(getattr(cost, "values", cost), dtype=float)
    mu, nu = _w(mu), _w(nu)
    if not epsilon > 0:
        raise PreconditionError("epsilon must be > 0")
    ri, cj = mu > 0, nu > 0
    logk = -c[np.ix_(ri, cj)] / epsilon
    lmu, lnu = np.log(mu[ri]), np.log(nu[cj])
    f = np.zeros(ri.sum())
    g = np.zeros(cj.sum())
    err = np.inf
    for _ in range(max_iter):
        g = lnu - logsumexp(logk + f[:, None], axis=0)
        f = lmu - logsumexp(logk + g[None, :], axis=1)
        lg = logk + f[:, None] + g[None, :]
        err = float(np.sum(np.abs(np.exp(logsumexp(lg, axis=0)) - nu[cj])))
        if err <= tol:
            break
    else:
        raise SinkhornNonconvergenceError(
            f"Sinkhorn stopped at column residual {err:.3e}", residuals=(0.0, err)
        )
    full = np.full(c.shape, -np.inf)
    full[np.ix_(ri, cj)] = lg
    fu = np.full(mu.shape, -np.inf)
    fu[ri] = f
    gv = np.full(nu.shape, -np.inf)
    gv[cj] = g
    value = float(_entropic_value(c, full, epsilon))
    return Coupling(full), value, (fu, gv)


# exp-domain scaling is used when the shifted log-kernel stays above this
_EXP_FLOOR = -300.0


def _sinkhorn_values_batch(c, mu, nus, epsilon, tol=1e-13, max_iter=100_000):
    """MK_eps(mu, nu_b) for a batch of strategy marginals of shape (B, J).

    Each batch row stops iterating once its own column marginal is within
    ``tol``.  Scaling runs on exp-domain vectors when the kernel, shifted by its
    row minima, stays far from underflow, and in log domain otherwise.
    """
    ri = mu > 0
    c = c[ri]
    logk = -(c - c.min(axis=1, keepdims=True)) / epsilon
    lmu = np.log(mu[ri])
    with np.errstate(divide="ignore"):
        lnu = np.log(nus)
    B, I = nus.shape[0], c.shape[0]
    f = np.zeros((B, I))
    g = np.zeros_like(lnu)
    active = np.arange(B)
    use_exp = logk.min() > _EXP_FLOOR
    K, mu_r = np.exp(logk), mu[ri]
    for _ in range(max_iter):
        if use_exp:
            # the positive scalings u = e^f, v = e^g on the active rows only
            u = np.exp(f[active])
            v = np.where(nus[active] > 0, nus[active] / (u @ K), 0.0)
            u = mu_r / (v @ K.T)
            cols = v * (u @ K)
            with np.errstate(divide="ignore"):
                g[active], f[active] = np.log(v), np.log(u)
        else:
            fa = f[active]
            ga = lnu[active] - logsumexp(logk[None] + fa[:, :, None], axis=1)
            ga = np.where(np.isfinite(lnu[active]), ga, -np.inf)
            fa = lmu[None] - logsumexp(logk[None] + ga[:, None, :], axis=2)
            cols = np.exp(ga + logsumexp(logk[None] + fa[:, :, None], axis=1))
            g[active], f[active] = ga, fa
        err = np.sum(np.abs(cols - nus[active]), axis=1)
        active = active[err > tol]
        if active.size == 0:
            break
    else:
        raise SinkhornNonconvergenceError(f"batched Sinkhorn stopped at {err.max():.3e}")
    lg = logk[None] + f[:, :, None] + g[:, None, :]
    return _entropic_value(c[None], lg, epsilon)


def objective_value(nu, problem: ProblemSpec, tol: float = 1e-12) -> float:
    """MK_eps(nu) + E(nu), with MK_eps evaluated by Sinkhorn."""
    _, mk, _ = sinkhorn(problem.cost, problem.mu, nu, problem.epsilon, tol=tol)
    return mk + energy(problem, nu)


def plan_objective(gamma: Coupling, problem: ProblemSpec, interaction_factor: float = 0.5
                   ) -> float:
    """Objective evaluated on a coupling: c.gamma + eps sum gamma(ln gamma - 1) + E(Lambda_2 gamma).

    Equals :func:`objective_value` at nu = Lambda_2 gamma whenever gamma is the
    entropic plan between its own marginals, which holds for converged solver output.
    """
    nu = np.exp(_log_nu(gamma))
    mk = float(_entropic_value(problem.cost.values, gamma.log, problem.epsilon))
    return mk + energy(problem, nu, interaction_factor)


# -- brute-force oracle -----------------------------------------------------------


def _simplex_grid(J, res):
    if J == 2:
        t = np.arange(res + 1) / res
        return np.column_stack([t, 1.0 - t])
    pts = [(a, b) for a in range(res + 1) for b in range(res + 1 - a)]
    ab = np.array(pts, dtype=float) / res
    return np.column_stack([ab, 1.0 - ab.sum(axis=1)])


def _batch_objective(problem, nus):
    mk = _sinkhorn_values_batch(problem.cost.values, _w(problem.mu), nus, problem.epsilon)
    phi = problem.interaction.values
    e = (
        np.sum(problem.congestion.energy(nus), axis=1)
        + 0.5 * np.einsum("bk,kj,bj->b", nus, phi, nus)
        + nus @ problem.potential.values
    )
    return mk + e


def _local_grid(center, J, h, half):
    offs = np.arange(-half, half + 1) * h
    pts = []
    for d in itertools.product(offs, repeat=J - 1):
        head = center[: J - 1] + np.array(d)
        pts.append(np.append(head, 1.0 - head.sum()))
    pts = np.array(pts)
    ok = np.all(pts >= 0, axis=1)
    return pts[ok]


def brute_force_minimize(problem: ProblemSpec, resolution: int = 400, refine: int = 10,
                         return_value: bool = False):
    """Exhaustive simplex search for min MK_eps(nu) + E(nu), for |J| <= 3.

    A grid with ``resolution`` steps per simplex direction is scanned, then a
    ``refine``-times finer grid around the best point; finally a quadratic is
    least-squares fitted to the refined samples next to the best one and its
    stationary point is kept if it evaluates lower.  Ties go to the
    lexicographically smallest nu.
    """
    J = problem.shape[1]
    if J > 3:
        raise OracleScopeError(f"brute force supports at most 3 strategies, got {J}")
    if resolution < 100:
        raise OracleScopeError("resolution must be >= 100")
    if J == 1:
        nu = np.array([1.0])
        return (nu, objective_value(nu, problem)) if return_value else nu
    grid = _simplex_grid(J, resolution)
    vals = _batch_objective(problem, grid)
    best = grid[int(np.argmin(vals))]
    h = 1.0 / (resolution * refine)
    fine = _local_grid(best, J, h, refine)
    fvals = _batch_objective(problem, fine)
    k = int(np.argmin(fvals))
    best, best_val = fine[k], float(fvals[k])

    # quadratic polish on the 5^(J-1) stencil around the refined optimum
    stencil = _local_grid(best, J, h, 2)
    if len(stencil) == 5 ** (J - 1):
        svals = _batch_objective(problem, stencil)
        x = stencil[:, : J - 1] - best[: J - 1]
        cols = [np.ones(len(x))] + [x[:, a] for a in range(J - 1)]
        cols += [x[:, a] * x[:, b] for a in range(J - 1) for b in range(a, J - 1)]
        coef, *_ = np.linalg.lstsq(np.column_stack(cols), svals - best_val, rcond=None)
        g = coef[1:J]
        H = np.zeros((J - 1, J - 1))
        idx = J
        for a in range(J - 1):
            for b in range(a, J - 1):
                H[a, b] += coef[idx] * (1.0 if a != b else 2.0)
                H[b, a] = H[a, b]
                idx += 1
        if np.all(np.linalg.eigvalsh(H) > 0):
            step = -np.linalg.solve(H, g)
            if np.all(np.abs(step) <= 2 * h):
                head = best[: J - 1] + step
                cand = np.append(head, 1.0 - head.sum())
                if np.all(cand >= 0):
                    cv = float(_batch_objective(problem, cand[None])[0])
                    if cv <= best_val:
                        best, best_val = cand, cv
    return (best, best_val) if return_value else best
