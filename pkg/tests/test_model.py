import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cournot_nash.errors import DegenerateMeasureError, InvalidConfigError
from cournot_nash.model import (
    CongestionSpec,
    DiscreteSpace,
    InteractionMatrix,
    ProbabilityVector,
    ProblemSpec,
    TwoPopulationSpec,
    build_grid,
    cell_volume,
    gaussian_mixture,
    interaction_kernel,
    power_cost,
    power_potential,
    uniform_measure,
)

from conftest import line


def test_grid_endpoints_only():
    g = build_grid([0.0, 1.0], 2)
    np.testing.assert_array_equal(g.points[:, 0], [0.0, 1.0])


def test_grid_fig1_spacing():
    g = build_grid([0.0, 16.0], 500)
    assert len(g) == 500
    np.testing.assert_allclose(np.diff(g.points[:, 0]), 16.0 / 499, rtol=1e-12)
    assert cell_volume(g) == pytest.approx(16.0 / 499)


def test_grid_2d_row_major():
    g = build_grid([0.0, 5.0], 3, dim=2)
    assert len(g) == 9
    np.testing.assert_array_equal(g.points[0], [0.0, 0.0])
    np.testing.assert_array_equal(g.points[1], [0.0, 2.5])
    np.testing.assert_array_equal(g.points[3], [2.5, 0.0])


@pytest.mark.parametrize("bounds,n", [([0.0, 1.0], 1), ([1.0, 0.0], 5), ([2.0, 2.0], 4)])
def test_grid_rejects_bad_input(bounds, n):
    with pytest.raises(InvalidConfigError):
        build_grid(bounds, n)


def test_space_rejects_duplicates_and_empty():
    with pytest.raises(InvalidConfigError):
        line(0.0, 1.0, 1.0)
    with pytest.raises(InvalidConfigError):
        DiscreteSpace(np.zeros((0, 1)))


def test_probability_vector_invariants():
    X = line(0.0, 1.0)
    with pytest.raises(InvalidConfigError):
        ProbabilityVector(X, np.array([0.5, 0.6]))
    with pytest.raises(InvalidConfigError):
        ProbabilityVector(X, np.array([1.5, -0.5]))
    ProbabilityVector(X, np.array([0.25, 0.75]))


def test_gaussian_point_mass_limit():
    X = line(0.0, 1.0, 2.0)
    mu = gaussian_mixture(X, [(1.0, 1e-3, 1.0)])
    assert mu.weights[1] == pytest.approx(1.0, abs=1e-12)


def test_gaussian_symmetric_components():
    X = build_grid([0.0, 10.0], 41)
    mu = gaussian_mixture(X, [(3.0, 0.8, 1.0), (7.0, 0.8, 1.0)])
    np.testing.assert_allclose(mu.weights, mu.weights[::-1], atol=1e-15)


def test_gaussian_fig1_sums_to_one():
    X = build_grid([0.0, 16.0], 500)
    mu = gaussian_mixture(X, [(4.0, 1.0, 1.0), (12.0, 1.0, 1.0)])
    assert abs(mu.weights.sum() - 1.0) <= 1e-12


def test_gaussian_degenerate():
    X = line(0.0, 1.0)
    with pytest.raises(DegenerateMeasureError):
        gaussian_mixture(X, [(1e6, 1e-3, 1.0)])
    with pytest.raises(InvalidConfigError):
        gaussian_mixture(X, [(0.0, -1.0, 1.0)])


def test_uniform_support():
    X = build_grid([0.0, 10.0], 11)
    mu = uniform_measure(X, (0.0, 1.0))
    np.testing.assert_allclose(mu.weights[:2], 0.5)
    assert mu.weights[2:].sum() == 0.0


def test_power_cost_examples():
    X = build_grid([0.0, 4.0], 5)
    c = power_cost(X, X, 1.7).values
    np.testing.assert_array_equal(np.diag(c), 0.0)
    assert power_cost(line(0.0), line(2.0), 3.0).values[0, 0] == pytest.approx(8.0)
    g = build_grid([0.0, 16.0], 50)
    assert power_cost(g, g, 0.1).values.max() == pytest.approx(16.0**0.1, rel=1e-14)


def test_power_cost_monotone_in_p_beyond_unit_distance():
    X = build_grid([0.0, 5.0], 11)
    d = power_cost(X, X, 1.0).values
    far = d > 1
    c1, c2 = power_cost(X, X, 2.0).values, power_cost(X, X, 2.5).values
    assert np.all(c2[far] > c1[far])


def test_interaction_kernel_examples():
    Y = line(0.0, 1.0)
    assert interaction_kernel(Y, 0.0).is_zero
    phi = interaction_kernel(Y, 1e-4, 2.0).values
    np.testing.assert_allclose(phi, [[0.0, 1e-4], [1e-4, 0.0]])


def test_interaction_frobenius_fig1():
    Y = build_grid([0.0, 16.0], 500)
    phi = interaction_kernel(Y, 1e-4, 2.0)
    direct = float(np.sum(phi.values**2))
    assert phi.frobenius_sq == pytest.approx(direct, rel=1e-12)
    # the fig. 1 kernel is far from the convexity threshold
    assert not phi.satisfies_norminter


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=2, max_size=12, unique=True),
       st.floats(0.0, 2.0), st.floats(0.1, 4.0))
def test_interaction_kernel_exactly_symmetric(ys, scale, q):
    phi = interaction_kernel(line(*ys), scale, q).values
    assert np.array_equal(phi, phi.T)
    assert np.all(np.diag(phi) == 0.0)


def test_interaction_matrix_rejects_asymmetric():
    with pytest.raises(InvalidConfigError):
        InteractionMatrix(np.array([[0.0, 1.0], [0.5, 0.0]]))


def test_congestion_kinds():
    p = CongestionSpec("power", 8.0)
    assert p.energy(0.5) == pytest.approx(0.5**8)
    assert p.derivative(0.5) == pytest.approx(8 * 0.5**7)
    e = CongestionSpec("entropy")
    assert e.energy(2.0) == pytest.approx(2 * np.log(2) - 2)
    assert e.derivative(2.0) == pytest.approx(np.log(2))
    lb = CongestionSpec("log_barrier")
    assert not lb.monotone and p.monotone and e.monotone
    with pytest.raises(InvalidConfigError):
        CongestionSpec("power", 1.0)
    with pytest.raises(InvalidConfigError):
        CongestionSpec("quartic")


def test_congestion_density_scaling():
    h = 0.25
    c = CongestionSpec("power", 3.0, cell=h)
    t = 0.1
    assert c.energy(t) == pytest.approx(h * (t / h) ** 3)
    assert c.derivative(t) == pytest.approx(3 * (t / h) ** 2)


@pytest.mark.parametrize("kind,q", [("power", 2.0), ("power", 8.0), ("entropy", 2.0)])
def test_congestion_log_forms_match_direct(kind, q):
    c = CongestionSpec(kind, q, coeff=1.3, cell=0.7)
    t = np.array([1e-3, 0.2, 1.0, 3.0])
    u = np.log(t)
    np.testing.assert_allclose(c.derivative_log(u), c.derivative(t), rtol=1e-12)
    np.testing.assert_allclose(c.log_slope(u), t * c.second_derivative(t), rtol=1e-12)


def test_power_potential():
    Y = line(7.0, 9.0, 11.0)
    np.testing.assert_allclose(power_potential(Y, 9.0, 4.0).values, [16.0, 0.0, 16.0])
    np.testing.assert_allclose(power_potential(Y, 9.0, 3, signed=True).values, [-8.0, 0.0, 8.0])
    with pytest.raises(InvalidConfigError):
        power_potential(Y, 9.0, 2.5, signed=True)


def test_problem_and_two_population_validation():
    X, Y = line(0.0, 1.0), line(0.0, 1.0, 2.0)
    mu = ProbabilityVector(X, np.array([0.5, 0.5]))
    with pytest.raises(InvalidConfigError):
        ProblemSpec(X=X, Y=Y, mu=mu, cost=power_cost(X, Y, 2.0), epsilon=-1.0)
    with pytest.raises(InvalidConfigError):
        ProblemSpec(X=X, Y=Y, mu=mu, cost=power_cost(X, X, 2.0), epsilon=1.0)
    p1 = ProblemSpec(X=X, Y=Y, mu=mu, cost=power_cost(X, Y, 2.0), epsilon=1.0)
    Y2 = line(0.0, 1.0, 2.5)
    p2 = ProblemSpec(X=X, Y=Y2, mu=mu, cost=power_cost(X, Y2, 2.0), epsilon=1.0)
    with pytest.raises(InvalidConfigError):
        TwoPopulationSpec(p1, p2)
