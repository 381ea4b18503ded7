"""Problem data: point sets, measures, cost/interaction matrices and energies.

Every matrix indexed by strategies inherits the ordering of ``DiscreteSpace.points``.
Two-dimensional grids are stored row-major (first coordinate varies slowest).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateMeasureError, InvalidConfigError

CONGESTION_KINDS = ("none", "power", "entropy", "log_barrier")


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DiscreteSpace:
    """Finite, ordered point cloud in R^dim (dim 1 or 2)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise InvalidConfigError("a space needs a non-empty (n, dim) array of points")
        if pts.shape[1] not in (1, 2):
            raise InvalidConfigError(f"unsupported dimension {pts.shape[1]}")
        if not np.all(np.isfinite(pts)):
            raise InvalidConfigError("points must be finite")
        if len(np.unique(pts, axis=0)) != len(pts):
            raise InvalidConfigError("points must be pairwise distinct")
        object.__setattr__(self, "points", _frozen(pts))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.points.shape[0]

    def same_as(self, other: "DiscreteSpace") -> bool:
        return self.points.shape == other.points.shape and bool(
            np.array_equal(self.points, other.points)
        )


@dataclass(frozen=True, eq=False)
class ProbabilityVector:
    space: DiscreteSpace
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        if w.shape[0] != len(self.space):
            raise InvalidConfigError(
                f"weights have length {w.shape[0]}, space has {len(self.space)} points"
            )
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise InvalidConfigError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise InvalidConfigError(f"weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "weights", _frozen(w))

    @classmethod
    def normalized(cls, space, weights):
        w = np.asarray(weights, dtype=float)
        total = w.sum()
        if not np.isfinite(total) or total <= 0:
            raise DegenerateMeasureError("cannot normalize a measure with zero total mass")
        return cls(space, w / total)

    def __len__(self):
        return len(self.weights)


@dataclass(frozen=True, eq=False)
class CostMatrix:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise InvalidConfigError("cost must be a matrix")
        if not np.all(np.isfinite(v)):
            raise InvalidConfigError("cost entries must be finite")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True, eq=False)
class InteractionMatrix:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise InvalidConfigError("interaction matrix must be square")
        if not np.all(np.isfinite(v)):
            raise InvalidConfigError("interaction entries must be finite")
        if not np.array_equal(v, v.T):
            raise InvalidConfigError("interaction matrix must be symmetric")
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros((n, n)))

    @property
    def frobenius_sq(self) -> float:
        return float(np.sum(self.values**2))

    @property
    def satisfies_norminter(self) -> bool:
        """Sufficient condition for convexity of the quadratic energy."""
        return self.frobenius_sq < 1.0

    @property
    def is_zero(self) -> bool:
        return not np.any(self.values)


@dataclass(frozen=True)
class CongestionSpec:
    """Per-strategy congestion energy F and its derivative f = F'.

    With ``cell`` different from 1 the energy is evaluated on densities,
    ``F(t) = coeff * cell * base(t / cell)``, so that ``f(t) = coeff * base'(t / cell)``.

    ``base`` is ``t**exponent`` (power), ``t ln t - t`` (entropy) or ``ln t``
    (log_barrier).  The log barrier has a decreasing derivative and is only
    accepted by the semi-implicit solvers.
    """

    kind: str = "none"
    exponent: float = 2.0
    coeff: float = 1.0
    cell: float = 1.0

    def __post_init__(self):
        if self.kind not in CONGESTION_KINDS:
            raise InvalidConfigError(f"unknown congestion kind {self.kind!r}")
        if self.kind == "power" and not self.exponent > 1:
            raise InvalidConfigError("power congestion needs exponent > 1")
        if not self.coeff >= 0 or not self.cell > 0:
            raise InvalidConfigError("congestion coeff must be >= 0 and cell > 0")

    @property
    def is_zero(self) -> bool:
        return self.kind == "none" or self.coeff == 0

    @property
    def monotone(self) -> bool:
        """True when f is nondecreasing on (0, inf)."""
        return self.kind != "log_barrier" or self.coeff == 0

    @property
    def singular_at_zero(self) -> bool:
        return self.kind in ("entropy", "log_barrier") and self.coeff != 0

    def energy(self, t):
        t = np.asarray(t, dtype=float)
        if self.is_zero:
            return np.zeros_like(t)
        s = t / self.cell
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.kind == "power":
                base = s**self.exponent
            elif self.kind == "entropy":
                base = np.where(s > 0, s * np.log(np.where(s > 0, s, 1.0)) - s, 0.0)
            else:
                base = np.log(s)
        return self.coeff * self.cell * base

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        if self.is_zero:
            return np.zeros_like(t)
        s = t / self.cell
        q = self.exponent
        with np.errstate(divide="ignore"):
            if self.kind == "power":
                return self.coeff * q * s ** (q - 1)
            if self.kind == "entropy":
                return self.coeff * np.log(s)
            return self.coeff / s

    def second_derivative(self, t):
        t = np.asarray(t, dtype=float)
        if self.is_zero:
            return np.zeros_like(t)
        s = t / self.cell
        q = self.exponent
        with np.errstate(divide="ignore"):
            if self.kind == "power":
                return self.coeff * q * (q - 1) * s ** (q - 2) / self.cell
            if self.kind == "entropy":
                return self.coeff / t
            return -self.coeff / (s * s * self.cell)

    def log_slope(self, u):
        """t * f'(t) at t = exp(u), written to stay finite for very negative u."""
        u = np.asarray(u, dtype=float)
        if self.is_zero:
            return np.zeros_like(u)
        q = self.exponent
        ls = u - np.log(self.cell)
        if self.kind == "power":
            return self.coeff * q * (q - 1) * np.exp((q - 1) * ls)
        if self.kind == "entropy":
            return np.full_like(u, self.coeff)
        return -self.coeff * np.exp(-ls)

    def derivative_log(self, u):
        """f(exp(u)); the entropy branch avoids exp/log round trips."""
        u = np.asarray(u, dtype=float)
        if self.is_zero:
            return np.zeros_like(u)
        ls = u - np.log(self.cell)
        if self.kind == "power":
            return self.coeff * self.exponent * np.exp((self.exponent - 1) * ls)
        if self.kind == "entropy":
            return self.coeff * ls
        return self.coeff * np.exp(-ls)


@dataclass(frozen=True, eq=False)
class PotentialVector:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(v)):
            raise InvalidConfigError("potential entries must be finite")
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n))


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    X: DiscreteSpace
    Y: DiscreteSpace
    mu: ProbabilityVector
    cost: CostMatrix
    congestion: CongestionSpec = field(default_factory=CongestionSpec)
    interaction: InteractionMatrix | None = None
    potential: PotentialVector | None = None
    epsilon: float = 1.0

    def __post_init__(self):
        nI, nJ = len(self.X), len(self.Y)
        if self.interaction is None:
            object.__setattr__(self, "interaction", InteractionMatrix.zeros(nJ))
        if self.potential is None:
            object.__setattr__(self, "potential", PotentialVector.zeros(nJ))
        if not (np.isfinite(self.epsilon) and self.epsilon > 0):
            raise InvalidConfigError("epsilon must be > 0")
        if self.X.dim != self.Y.dim:
            raise InvalidConfigError("type and strategy spaces have different dimensions")
        if not self.mu.space.same_as(self.X):
            raise InvalidConfigError("mu must live on X")
        if self.cost.shape != (nI, nJ):
            raise InvalidConfigError(f"cost has shape {self.cost.shape}, expected {(nI, nJ)}")
        if self.interaction.values.shape != (nJ, nJ):
            raise InvalidConfigError("interaction shape does not match Y")
        if self.potential.values.shape != (nJ,):
            raise InvalidConfigError("potential length does not match Y")

    @property
    def shape(self):
        return self.cost.shape

    def replace(self, **changes) -> "ProblemSpec":
        fields = dict(
            X=self.X,
            Y=self.Y,
            mu=self.mu,
            cost=self.cost,
            congestion=self.congestion,
            interaction=self.interaction,
            potential=self.potential,
            epsilon=self.epsilon,
        )
        fields.update(changes)
        return ProblemSpec(**fields)


@dataclass(frozen=True, eq=False)
class TwoPopulationSpec:
    """Two populations choosing on a common strategy grid.

    Each population keeps its own congestion (``pop.congestion``); the
    populations are coupled through ``shared_congestion`` applied to nu1 + nu2.
    """

    pop1: ProblemSpec
    pop2: ProblemSpec
    shared_congestion: CongestionSpec = field(default_factory=CongestionSpec)

    def __post_init__(self):
        if not self.pop1.Y.same_as(self.pop2.Y):
            raise InvalidConfigError("both populations must share the same strategy set")

    def swapped(self) -> "TwoPopulationSpec":
        return TwoPopulationSpec(self.pop2, self.pop1, self.shared_congestion)


# -- constructors -------------------------------------------------------------


def build_grid(bounds, n: int, dim: int = 1) -> DiscreteSpace:
    """Uniform grid with ``n`` points per axis, endpoints included.

    ``bounds`` is a single ``(lo, hi)`` pair used on every axis or one pair
    per axis.
    """
    if dim not in (1, 2):
        raise InvalidConfigError("dim must be 1 or 2")
    if int(n) != n or n < 2:
        raise InvalidConfigError("a grid needs n >= 2 points per axis")
    b = np.asarray(bounds, dtype=float)
    if b.shape == (2,):
        b = np.tile(b, (dim, 1))
    if b.shape != (dim, 2):
        raise InvalidConfigError(f"bounds must be (lo, hi) or {dim} such pairs")
    if np.any(~np.isfinite(b)) or np.any(b[:, 1] <= b[:, 0]):
        raise InvalidConfigError("grid bounds must satisfy lo < hi")
    axes = [np.linspace(lo, hi, int(n)) for lo, hi in b]
    if dim == 1:
        return DiscreteSpace(axes[0][:, None])
    g0, g1 = np.meshgrid(axes[0], axes[1], indexing="ij")
    return DiscreteSpace(np.column_stack([g0.ravel(), g1.ravel()]))


def cell_volume(space: DiscreteSpace) -> float:
    """Volume of one cell of a uniform grid (product of per-axis spacings)."""
    vol = 1.0
    for k in range(space.dim):
        axis = np.unique(space.points[:, k])
        if len(axis) < 2:
            return 1.0
        vol *= (axis[-1] - axis[0]) / (len(axis) - 1)
    return float(vol)


def _sq_dist(space: DiscreteSpace, center):
    c = np.broadcast_to(np.asarray(center, dtype=float), (space.dim,))
    return np.sum((space.points - c) ** 2, axis=1)


def gaussian_mixture(space: DiscreteSpace, components: Sequence) -> ProbabilityVector:
    """Grid-sampled mixture of isotropic Gaussians, renormalized to mass one.

    Each component is ``(center, stdev, mass)``; ``center`` may be a scalar
    (broadcast over axes) or a coordinate vector.
    """
    if len(components) == 0:
        raise InvalidConfigError("a mixture needs at least one component")
    dens = np.zeros(len(space))
    for center, stdev, mass in components:
        if not stdev > 0 or not mass > 0:
            raise InvalidConfigError("mixture stdevs and masses must be positive")
        dens += mass * np.exp(-_sq_dist(space, center) / (2.0 * stdev**2))
    if not dens.sum() > 0:
        raise DegenerateMeasureError("mixture vanishes on every grid point")
    return ProbabilityVector.normalized(space, dens)


def uniform_measure(space: DiscreteSpace, support=None) -> ProbabilityVector:
    """Equal weights, optionally restricted to the box ``support`` (lo, hi)."""
    if support is None:
        mask = np.ones(len(space), dtype=bool)
    else:
        b = np.asarray(support, dtype=float)
        if b.shape == (2,):
            b = np.tile(b, (space.dim, 1))
        mask = np.all((space.points >= b[:, 0]) & (space.points <= b[:, 1]), axis=1)
    if not mask.any():
        raise DegenerateMeasureError("uniform support contains no grid point")
    return ProbabilityVector.normalized(space, mask.astype(float))


def _distances(A: DiscreteSpace, B: DiscreteSpace):
    if A.dim != B.dim:
        raise InvalidConfigError("spaces have different dimensions")
    diff = A.points[:, None, :] - B.points[None, :, :]
    if A.dim == 1:
        return np.abs(diff[..., 0])
    return np.sqrt(np.sum(diff * diff, axis=-1))


def power_cost(X: DiscreteSpace, Y: DiscreteSpace, p: float) -> CostMatrix:
    """c_ij = |x_i - y_j|^p (Euclidean norm in 2D)."""
    if not p > 0:
        raise InvalidConfigError("cost exponent p must be > 0")
    return CostMatrix(_distances(X, Y) ** p)


def interaction_kernel(Y: DiscreteSpace, scale: float, q: float = 2.0) -> InteractionMatrix:
    """phi_kj = scale * |y_k - y_j|^q, built from the upper triangle so it is exactly symmetric."""
    if not scale >= 0:
        raise InvalidConfigError("interaction scale must be >= 0")
    if not q > 0:
        raise InvalidConfigError("interaction exponent must be > 0")
    upper = np.triu(scale * _distances(Y, Y) ** q, k=1)
    return InteractionMatrix(upper + upper.T)


def power_potential(Y: DiscreteSpace, center, exponent: float, coeff: float = 1.0,
                    signed: bool = False) -> PotentialVector:
    """v_j = coeff * |y_j - center|^exponent, or coeff * (y_j - center)^exponent when signed (1D)."""
    if signed:
        if Y.dim != 1:
            raise InvalidConfigError("signed potentials are only defined in 1D")
        if not float(exponent).is_integer():
            raise InvalidConfigError("signed potentials need an integer exponent")
        d = Y.points[:, 0] - float(np.ravel(center)[0])
        return PotentialVector(coeff * d ** int(exponent))
    return PotentialVector(coeff * _sq_dist(Y, center) ** (exponent / 2.0))
