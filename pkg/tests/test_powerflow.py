import numpy as np
import pytest
import scipy.sparse as sp

from conftest import TWO_BUS
from oracles import dense_admittance, pinned_dense, two_bus_voltage
from tapopt.feeder import build_admittance, parse_feeder_text
from tapopt.powerflow import (
    TOL_PF, Factorization, FeederSolver, InjectionSet, PowerFlowError, SingularMatrixError, factorize,
    node_currents, nominal_injections, solve_power_flow,
)


def two_bus(load=0.1 + 0.05j):
    m = parse_feeder_text(TWO_BUS)
    inj = InjectionSet(np.array([0, load]), np.zeros(2))
    return m, inj


def test_factorize_two_node_matches_inverse():
    z = 0.01 + 0.02j
    Y = np.array([[1 / z + 1, -1 / z], [-1 / z, 1 / z + 0.5]])
    b = np.array([0, 1.0 + 0j])
    x = Factorization(sp.csc_matrix(Y)).solve(b)
    np.testing.assert_allclose(x, np.linalg.inv(Y) @ b, rtol=1e-12)


def test_factorize_identity():
    b = np.array([1 + 2j, -3j, 4])
    np.testing.assert_array_equal(Factorization(sp.identity(3, dtype=complex, format="csc")).solve(b), b)


def test_factorize_residual_on_fixture(feeder13, rng):
    Y = build_admittance(feeder13, {"sub": 3})
    fact = factorize(Y)
    b = rng.standard_normal(13) + 1j * rng.standard_normal(13)
    x = fact.solve(b)
    assert np.max(np.abs(Y.pinned() @ x - b)) <= 1e-10


def test_singular_matrix():
    with pytest.raises(SingularMatrixError):
        Factorization(sp.csc_matrix(np.zeros((2, 2), dtype=complex)))


def test_no_load_gives_slack_voltage(feeder40):
    sol = solve_power_flow(feeder40, {}, InjectionSet.zeros(40))
    np.testing.assert_allclose(sol.v, feeder40.flat_voltage, atol=1e-12)
    assert sol.converged


def test_two_bus_matches_closed_form():
    m, inj = two_bus()
    sol = solve_power_flow(m, {}, inj)
    assert abs(sol.v[1] - two_bus_voltage(1.0, 0.01 + 0.02j, 0.1 + 0.05j)) <= 1e-8


def test_two_bus_reverse_flow_raises_voltage():
    m = parse_feeder_text(TWO_BUS)
    sol = solve_power_flow(m, {}, InjectionSet(np.zeros(2, dtype=complex), np.array([0, 0.2])))
    assert abs(sol.v[1]) > abs(sol.v[0])
    assert abs(sol.v[1] - two_bus_voltage(1.0, 0.01 + 0.02j, -0.2 + 0j)) <= 1e-8


def test_node_currents_unit_case():
    inj = InjectionSet(np.array([0.1 + 0j]), np.zeros(1))
    assert node_currents(np.array([1 + 0j]), inj)[0] == pytest.approx(-0.1 + 0j)
    assert node_currents(np.ones(3, dtype=complex), InjectionSet.zeros(3)).tolist() == [0, 0, 0]


def test_node_currents_zero_voltage():
    with pytest.raises(ZeroDivisionError):
        node_currents(np.array([0j]), InjectionSet(np.array([0.1 + 0j]), np.zeros(1)))


def test_kcl_residual_at_convergence(feeder13):
    inj = nominal_injections(feeder13, 1.0, 0.5)
    sol = solve_power_flow(feeder13, {"sub": 2}, inj)
    Y = build_admittance(feeder13, {"sub": 2})
    i_expected = node_currents(sol.v, inj, Y)
    free = ~feeder13.slack_mask
    assert np.max(np.abs((Y.matrix @ sol.v - i_expected)[free])) <= 10 * TOL_PF
    np.testing.assert_allclose(sol.i, Y.matrix @ sol.v)


def test_slack_unchanged(feeder40):
    for taps in ({}, {"sub": 8, "reg": -4}):
        sol = solve_power_flow(feeder40, taps, nominal_injections(feeder40, 2.0, 1.0))
        np.testing.assert_array_equal(sol.v[feeder40.slack_nodes], feeder40.slack_voltage)


def test_agrees_with_dense_fixed_point(feeder13):
    inj = nominal_injections(feeder13, 1.0, 0.3)
    Yp = pinned_dense(feeder13, dense_admittance(feeder13, {"sub": -3}))
    v = feeder13.flat_voltage.copy()
    for _ in range(200):
        rhs = np.conj(inj.net / v)
        rhs[feeder13.slack_nodes] = feeder13.slack_voltage
        v = np.linalg.solve(Yp, rhs)
    sol = solve_power_flow(feeder13, {"sub": -3}, inj)
    np.testing.assert_allclose(sol.v, v, atol=1e-9)


def test_raising_tap_raises_downstream(feeder40):
    inj = nominal_injections(feeder40, 1.0, 0.0)
    solver = FeederSolver(feeder40)
    lo = solver.solve({"sub": 0}, inj).vmag
    hi = solver.solve({"sub": 1}, inj).vmag
    free = ~feeder40.slack_mask
    assert np.all(hi[free] > lo[free])


def test_warm_start_saves_iterations(feeder40):
    solver = FeederSolver(feeder40)
    inj = nominal_injections(feeder40, 1.0, 0.2)
    cold = solver.solve({}, inj)
    warm = solver.solve({}, InjectionSet(inj.s_load * 1.01, inj.p_pv), v_init=cold.v)
    assert warm.iterations < cold.iterations


def test_deterministic(feeder40):
    inj = nominal_injections(feeder40, 1.3, 0.4)
    a = FeederSolver(feeder40).solve({"reg": 2}, inj)
    b = FeederSolver(feeder40).solve({"reg": 2}, inj)
    assert np.array_equal(a.v, b.v)


def test_divergence_reported():
    m, _ = two_bus()
    heavy = InjectionSet(np.array([0, 30.0 + 10j]), np.zeros(2))
    with pytest.raises(PowerFlowError, match="did not converge") as ei:
        solve_power_flow(m, {}, heavy)
    assert ei.value.solution is not None and not ei.value.solution.converged
    assert not solve_power_flow(m, {}, heavy, check=False).converged


def test_factorization_cache_is_reused(feeder40):
    solver = FeederSolver(feeder40, cache_size=2)
    f1 = solver.factorization({"sub": 1})
    assert solver.factorization({"sub": 1}) is f1
    solver.factorization({"sub": 2})
    solver.factorization({"sub": 3})
    assert solver.factorization({"sub": 1}) is not f1
