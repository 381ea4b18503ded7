import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cournot_nash.errors import DivergenceUndefinedError
from cournot_nash.kl_core import Coupling, gibbs_kernel, kl_divergence, logsumexp, marginals
from cournot_nash.model import CostMatrix, PotentialVector

from conftest import fig1_problem

positive = arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)),
                  elements=st.floats(1e-3, 10.0))


def test_kl_self_is_minus_mass():
    g = Coupling.from_values(np.array([[0.2, 0.3], [0.1, 0.4]]))
    assert kl_divergence(g, g) == pytest.approx(-1.0, abs=1e-15)


def test_kl_scalar_example():
    assert kl_divergence(Coupling.from_values([[1.0]]), Coupling.from_values([[np.e]])) == pytest.approx(-2.0)


def test_kl_scaling_identity(rng):
    g = Coupling.from_values(rng.uniform(0.1, 1.0, (3, 4)))
    t = Coupling.from_values(rng.uniform(0.1, 1.0, (3, 4)))
    t2 = Coupling(t.log + np.log(2.0))
    assert kl_divergence(g, t2) == pytest.approx(kl_divergence(g, t) - np.log(2.0) * g.mass)


def test_kl_zero_conventions():
    theta = Coupling.from_values([[1.0, 0.0]])
    assert kl_divergence(Coupling.from_values([[1.0, 0.0]]), theta) == pytest.approx(-1.0)
    with pytest.raises(DivergenceUndefinedError):
        kl_divergence(Coupling.from_values([[0.5, 0.5]]), theta)


@settings(max_examples=50, deadline=None)
@given(positive, st.integers(0, 2**32 - 1))
def test_kl_lower_bound(theta_vals, seed):
    rng = np.random.default_rng(seed)
    theta = Coupling.from_values(theta_vals)
    gamma_vals = theta_vals * rng.uniform(0.2, 3.0, theta_vals.shape)
    gamma = Coupling.from_values(gamma_vals)
    direct = float(np.sum(gamma_vals * (np.log(gamma_vals / theta_vals) - 1.0)))
    kl = kl_divergence(gamma, theta)
    assert kl == pytest.approx(direct, rel=1e-10, abs=1e-12)
    assert kl >= -theta.mass - 1e-12
    assert kl_divergence(theta, theta) == pytest.approx(-theta.mass)


def test_gibbs_kernel_examples():
    c = CostMatrix(np.zeros((2, 3)))
    np.testing.assert_array_equal(gibbs_kernel(c, None, 0.7).log, 0.0)
    c = CostMatrix(np.array([[0.5, 0.0]]))
    assert gibbs_kernel(c, None, 0.5).values[0, 0] == pytest.approx(np.exp(-1.0))


def test_gibbs_kernel_fig1_is_finite_in_log_domain():
    p = fig1_problem(n=500, eps=0.05)
    k = gibbs_kernel(p.cost, p.potential, p.epsilon)
    assert np.all(np.isfinite(k.log))
    expected = (256.0 + 9.0**4) / 0.05
    assert -k.log.min() == pytest.approx(expected, rel=1e-12)
    # the same table in linear scale would underflow everywhere except near the minimum
    assert np.mean(np.exp(k.log) == 0.0) > 0.5


def test_gibbs_kernel_potential_shift_keeps_row_argmax(rng):
    c = CostMatrix(rng.uniform(0, 5, (4, 6)))
    v = rng.uniform(0, 2, 6)
    a = gibbs_kernel(c, PotentialVector(v), 0.3).log
    b = gibbs_kernel(c, PotentialVector(v + 7.0), 0.3).log
    np.testing.assert_array_equal(np.argmax(a, axis=1), np.argmax(b, axis=1))
    np.testing.assert_allclose(a - b, 7.0 / 0.3)


def test_marginals_examples():
    mu = np.array([0.2, 0.3, 0.5])
    with np.errstate(divide="ignore"):
        g = Coupling(np.log(np.diag(mu)))
    a, n = marginals(g)
    np.testing.assert_allclose(a, mu)
    np.testing.assert_allclose(n, mu)
    a, n = marginals(Coupling.from_values(np.ones((2, 3))))
    np.testing.assert_allclose(a, [3.0, 3.0])
    np.testing.assert_allclose(n, [2.0, 2.0, 2.0])


def test_marginals_mass_conservation(rng):
    vals = rng.uniform(0.0, 1.0, (5, 7))
    a, n = marginals(Coupling.from_values(vals))
    assert abs(a.sum() - vals.sum()) <= 1e-13
    assert abs(n.sum() - vals.sum()) <= 1e-13


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.floats(-700, 700)))
def test_marginal_sums_agree(logs):
    a, n = marginals(Coupling(logs))
    assert a.sum() == pytest.approx(n.sum(), rel=1e-12)


def test_logsumexp_handles_empty_lines():
    a = np.array([[-np.inf, -np.inf], [0.0, np.log(3.0)]])
    out = logsumexp(a, axis=1)
    assert out[0] == -np.inf
    assert out[1] == pytest.approx(np.log(4.0))


@pytest.mark.parametrize("bad", [[[np.nan]], [[np.inf]], [[-1.0, 1.0]]])
def test_from_values_rejects_invalid_entries(bad):
    with pytest.raises(ValueError):
        Coupling.from_values(bad)
