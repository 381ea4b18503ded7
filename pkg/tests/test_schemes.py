import numpy as np
import pytest

from cournot_nash import diagnostics as dg
from cournot_nash.dykstra import DykstraConfig
from cournot_nash.errors import InvalidConfigError
from cournot_nash.model import (
    CongestionSpec,
    CostMatrix,
    InteractionMatrix,
    PotentialVector,
    ProbabilityVector,
    ProblemSpec,
)
from cournot_nash.schemes import SchemeConfig, solve, solve_implicit, solve_semi_implicit

from conftest import fig1_problem, line, small_convex_problem

TIGHT = SchemeConfig(outer_tol=1e-11, dykstra=DykstraConfig(tol_nu=1e-12, tol_marginal=1e-13))


def check_report(rep, problem):
    assert rep.converged, rep.notes
    assert rep.marginal_residual <= 1e-12
    assert rep.gibbs_residual <= 10 * 1e-8 or rep.gibbs_residual <= 10 * TIGHT.outer_tol
    assert abs(rep.nu.weights.sum() - 1.0) <= 1e-10
    np.testing.assert_allclose(rep.gamma.values.sum(axis=0), rep.nu.weights, atol=1e-12)
    np.testing.assert_allclose(rep.gamma.values.sum(axis=1), problem.mu.weights, atol=1e-12)


def test_zero_interaction_stops_on_second_outer_step():
    p = small_convex_problem(scale=0.0)
    rep = solve_semi_implicit(p)
    check_report(rep, p)
    assert rep.outer_iterations == 2
    # the warm restart only runs the inner loop further, so the change is below tolerance
    assert rep.outer_trace[-1] <= SchemeConfig().outer_tol


def test_quadratic_congestion_schemes_agree():
    # phi = 0 and F = t^2/2 leave nothing for the remainder prox
    p = small_convex_problem(scale=0.0, congestion=CongestionSpec("power", 2.0, coeff=0.5))
    a = solve_implicit(p, TIGHT)
    b = solve_semi_implicit(p, TIGHT)
    assert np.sum(np.abs(a.nu.weights - b.nu.weights)) <= 1e-6


@pytest.mark.parametrize("seed", [None, 1, 2])
def test_convex_schemes_agree(seed):
    p = small_convex_problem(seed=seed)
    assert p.interaction.satisfies_norminter
    a = solve_implicit(p)
    b = solve_semi_implicit(p)
    check_report(a, p)
    check_report(b, p)
    assert np.sum(np.abs(a.nu.weights - b.nu.weights)) <= 1e-5
    assert (a.proxes_per_cycle, b.proxes_per_cycle) == (3, 2)
    assert a.prox_evaluations == 3 * a.cycles
    assert b.prox_evaluations == 2 * b.cycles


def test_symmetric_two_strategies():
    X = line(0.0, 1.0)
    p = ProblemSpec(
        X=X, Y=X,
        mu=ProbabilityVector(X, np.array([0.5, 0.5])),
        cost=CostMatrix(np.array([[0.0, 1.0], [1.0, 0.0]])),
        congestion=CongestionSpec("power", 2.0),
        interaction=InteractionMatrix(np.array([[0.0, 0.3], [0.3, 0.0]])),
        potential=PotentialVector(np.array([0.2, 0.2])),
        epsilon=0.4,
    )
    for scheme in ("implicit", "semi_implicit"):
        rep = solve(p, SchemeConfig(scheme=scheme))
        np.testing.assert_allclose(rep.nu.weights, [0.5, 0.5], atol=1e-12)


def test_oracle_three_by_three():
    p = small_convex_problem()
    rep = solve_implicit(p)
    ref = dg.brute_force_minimize(p)
    assert np.sum(np.abs(rep.nu.weights - ref)) <= 1e-4


def test_gibbs_certificate_and_diagnostics():
    p = small_convex_problem(eps=0.2)
    rep = solve_semi_implicit(p)
    check_report(rep, p)
    assert rep.gibbs_residual <= 10 * 1e-8
    assert rep.exploitability >= 0.0
    assert rep.stop_reason == "converged"
    assert rep.trace and rep.trace[-1].cycle >= 1


def test_zero_weight_types_are_dropped_and_restored():
    X = line(0.0, 1.0, 2.0)
    p = small_convex_problem().replace(mu=ProbabilityVector(X, np.array([0.5, 0.0, 0.5])))
    rep = solve_semi_implicit(p)
    assert rep.converged
    assert rep.gamma.values[1].sum() == 0.0
    np.testing.assert_allclose(rep.gamma.values.sum(axis=1), [0.5, 0.0, 0.5], atol=1e-12)


def test_nonconvex_warnings_for_implicit():
    p = small_convex_problem().replace(
        interaction=InteractionMatrix(np.array([[0.0, 2.0, 2.0], [2.0, 0.0, 2.0], [2.0, 2.0, 0.0]])))
    with pytest.warns(RuntimeWarning):
        rep = solve_implicit(p, SchemeConfig(scheme="implicit", max_outer=1,
                                             dykstra=DykstraConfig(max_cycles=50)))
    assert any("convexity" in n for n in rep.notes)


def test_log_barrier_rejected_by_implicit():
    p = small_convex_problem(congestion=CongestionSpec("log_barrier"))
    with pytest.raises(InvalidConfigError):
        solve_implicit(p)


def test_max_outer_is_reported():
    p = small_convex_problem(scale=0.3)
    rep = solve_semi_implicit(p, SchemeConfig(max_outer=1))
    assert not rep.converged
    assert rep.stop_reason == "max_outer"
    assert rep.notes


def test_scheme_config_validation():
    with pytest.raises(InvalidConfigError):
        SchemeConfig(scheme="explicit")
    with pytest.raises(InvalidConfigError):
        SchemeConfig(max_outer=0)


def test_fig1_concentration_grows_with_eps():
    conc = []
    for eps in (0.05, 0.5, 10.0):
        p = fig1_problem(n=60, eps=eps)
        rep = solve_semi_implicit(p)
        assert rep.converged
        assert rep.gibbs_residual <= 10 * 1e-8
        conc.append(rep.concentration)
    assert conc[0] < conc[1] < conc[2]
