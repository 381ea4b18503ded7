"""Log-domain couplings, KL divergence, Gibbs kernels and marginal maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceUndefinedError


def logsumexp(a, axis=None):
    """log(sum(exp(a))) along ``axis``; all -inf slices give -inf."""
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


@dataclass(frozen=True, eq=False)
class Coupling:
    """Nonnegative |I| x |J| matrix stored through its natural log.

    The constructor does not validate (solvers build many of these);
    :meth:`from_values` does.
    """

    log: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "log", np.asarray(self.log, dtype=float))

    @classmethod
    def from_values(cls, values):
        v = np.asarray(values, dtype=float)
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("coupling entries must be finite and nonnegative")
        with np.errstate(divide="ignore"):
            return cls(np.log(v))

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.log)

    @property
    def shape(self):
        return self.log.shape

    @property
    def log_mass(self) -> float:
        return logsumexp(self.log)

    @property
    def mass(self) -> float:
        return float(np.exp(self.log_mass))


def kl_divergence(gamma: Coupling, theta: Coupling) -> float:
    """KL(gamma | theta) = sum gamma (ln(gamma / theta) - 1), with 0 ln 0 = 0."""
    lg, lt = gamma.log, theta.log
    if lg.shape != lt.shape:
        raise ValueError("couplings have different shapes")
    g_pos = np.isfinite(lg)
    if np.any(g_pos & ~np.isfinite(lt)):
        raise DivergenceUndefinedError("gamma charges entries where theta vanishes")
    g = np.exp(lg[g_pos])
    return float(np.sum(g * (lg[g_pos] - lt[g_pos] - 1.0)))


def gibbs_kernel(cost, potential=None, epsilon: float = 1.0) -> Coupling:
    """Log-domain kernel exp(-(c_ij + v_j) / epsilon).

    ``cost`` and ``potential`` may be model objects or plain arrays.
    """
    c = np.asarray(getattr(cost, "values", cost), dtype=float)
    if potential is None:
        return Coupling(-c / epsilon)
    v = np.asarray(getattr(potential, "values", potential), dtype=float)
    return Coupling(-(c + v[None, :]) / epsilon)


def log_marginals(gamma: Coupling):
    """Row and column log-sums of gamma."""
    return logsumexp(gamma.log, axis=1), logsumexp(gamma.log, axis=0)


def marginals(gamma: Coupling):
    """Return (alpha, nu): row sums and column sums of gamma."""
    la, ln = log_marginals(gamma)
    return np.exp(la), np.exp(ln)
