import numpy as np
import pytest

from cournot_nash.model import (
    CongestionSpec,
    DiscreteSpace,
    ProbabilityVector,
    ProblemSpec,
    build_grid,
    gaussian_mixture,
    interaction_kernel,
    power_cost,
    power_potential,
)


def line(*xs):
    return DiscreteSpace(np.array(xs, dtype=float)[:, None])


def small_convex_problem(eps=0.5, n_types=3, seed=None, congestion=None, scale=0.1):
    """3-strategy problem on {0, 1, 2} with quadratic cost, congestion and a weak interaction."""
    X = line(*np.linspace(0.0, 2.0, n_types))
    Y = line(0.0, 1.0, 2.0)
    if seed is None:
        w = np.array([0.2, 0.5, 0.3]) if n_types == 3 else np.full(n_types, 1.0 / n_types)
    else:
        w = np.random.default_rng(seed).uniform(0.2, 1.0, n_types)
        w /= w.sum()
    return ProblemSpec(
        X=X,
        Y=Y,
        mu=ProbabilityVector(X, w),
        cost=power_cost(X, Y, 2.0),
        congestion=congestion or CongestionSpec("power", 2.0),
        interaction=interaction_kernel(Y, scale, 2.0),
        potential=power_potential(Y, 1.0, 2.0, 0.5),
        epsilon=eps,
    )


def fig1_problem(n=100, eps=0.05, p=2.0, density=True):
    X = build_grid([0.0, 16.0], n)
    cell = (16.0 / (n - 1)) if density else 1.0
    return ProblemSpec(
        X=X,
        Y=X,
        mu=gaussian_mixture(X, [(4.0, 1.0, 1.0), (12.0, 1.0, 1.0)]),
        cost=power_cost(X, X, p),
        congestion=CongestionSpec("power", 8.0, cell=cell),
        interaction=interaction_kernel(X, 1e-4, 2.0),
        potential=power_potential(X, 9.0, 4.0),
        epsilon=eps,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        terminalreporter.write_line(results[k])
