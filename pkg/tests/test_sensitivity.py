import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dense_admittance, fixed_current_voltage, identity_gap, pinned_dense
from tapopt.feeder import OltcDevice, TapRangeError, parse_feeder_text
from tapopt.powerflow import FeederSolver, InjectionSet, nominal_injections
from tapopt.sensitivity import (
    ErrorStats, build_sensitivity, delta_y_exact, delta_y_linear,
    linear_voltage_magnitude, sensitivity_vector, single_step_perturbations, validate_linearization,
)

DEV = OltcDevice("t", "p", "s", 0.001 + 0.01j, primary_nodes=(0,), secondary_nodes=(1,))
OLTC_2NODE = """\
bus p 12.47 a
bus s 4.16 a
slack p 1.0 0.0
oltc t p s 0.001 0.01 16 1.1 1
load s.a 300 100 x
"""


def test_delta_y_zero_without_change():
    assert np.all(delta_y_linear(DEV, 1.0, 1.0, 2).toarray() == 0)


def test_delta_y_affine():
    a = delta_y_linear(DEV, 1.0, 1.0 + 0.02, 2).toarray()
    b = delta_y_linear(DEV, 1.0, 1.0 + 0.01, 2).toarray()
    np.testing.assert_allclose(a, 2 * b, atol=1e-12)


def test_delta_y_one_step_value():
    dy = delta_y_linear(DEV, 1.0, 1.00625, 2).toarray()
    y = 1 / DEV.z_t
    assert dy[0, 0] == pytest.approx(0.0125 * y, rel=1e-12)
    assert dy[0, 1] == dy[1, 0] == pytest.approx(-0.00625 * y)
    assert dy[1, 1] == 0
    exact = delta_y_exact(DEV, 1.0, 1.00625, 2).toarray()
    gap = abs(exact[0, 0] - dy[0, 0]) / abs(dy[0, 0])
    assert gap == pytest.approx(0.00625 / 2, rel=1e-9)


def test_delta_y_range_check():
    with pytest.raises(TapRangeError):
        delta_y_linear(DEV, 1.0, 1.2, 2)


def test_two_node_sensitivity_dense_oracle():
    m = parse_feeder_text(OLTC_2NODE)
    solver = FeederSolver(m)
    base = solver.solve({}, nominal_injections(m))
    fact = solver.factorization({})
    dev = m.oltcs[0]
    s = sensitivity_vector(fact, dev, base.v, 1.0, m.slack_nodes)
    Yp = pinned_dense(m, dense_admittance(m))
    dY = delta_y_linear(dev, 1.0, 1.01, 2).toarray()
    dY[m.slack_nodes] = 0
    dv_dense = -np.linalg.solve(Yp, dY @ base.v)
    np.testing.assert_allclose(0.01 * s, dv_dense, atol=1e-14)


def test_weak_coupling_gives_small_sensitivity():
    big = OLTC_2NODE.replace("oltc t p s 0.001 0.01", "oltc t p s 1e6 1e6")
    # secondary also tied to the source through a stiff line
    m = parse_feeder_text(big + "branch p.a s.a 0.01 0.01\n")
    solver = FeederSolver(m)
    base = solver.solve({}, InjectionSet.zeros(m.n_nodes))
    s = sensitivity_vector(solver.factorization({}), m.oltcs[0], base.v, 1.0, m.slack_nodes)
    assert np.max(np.abs(s)) < 1e-5


def test_admittance_and_impedance_routes_agree():
    rng = np.random.default_rng(2)
    gaps = [identity_gap(rng) for _ in range(20)]
    assert max(gaps) <= 1e-12


def test_superposition(feeder40):
    solver = FeederSolver(feeder40)
    base = solver.solve({}, nominal_injections(feeder40, 1.0, 0.5))
    lin = build_sensitivity(solver, {}, base)
    both = lin.delta_v([0.01, -0.02])
    np.testing.assert_allclose(both, lin.delta_v([0.01, 0]) + lin.delta_v([0, -0.02]), atol=1e-15)


def test_magnitude_linearization_cases():
    assert linear_voltage_magnitude(1 + 0j, 0j) == 1.0
    assert linear_voltage_magnitude(1 + 0j, 0.01 + 0j) == pytest.approx(1.01, abs=1e-15)
    lin = linear_voltage_magnitude(1 + 0j, 0.01j)
    assert lin == 1.0
    assert abs(abs(1 + 0.01j) - lin) == pytest.approx(5e-5, rel=1e-3)
    with pytest.raises(ZeroDivisionError):
        linear_voltage_magnitude(0j, 0.1 + 0j)


@given(st.floats(0.5, 1.5), st.floats(-3, 3), st.floats(-0.2, 0.2))
def test_collinear_perturbation_exact(mag, ang, k):
    v0 = mag * np.exp(1j * ang)
    assert linear_voltage_magnitude(v0, k * v0) == pytest.approx(abs(v0 + k * v0), abs=1e-12)


def test_first_order_accuracy_quadratic_decay(feeder13):
    """Halving the ratio step cuts the error about fourfold against the fixed-current solution."""
    solver = FeederSolver(feeder13)
    base = solver.solve({}, nominal_injections(feeder13, 1.0, 1.2))
    lin = build_sensitivity(solver, {}, base)
    free = ~feeder13.slack_mask
    errs = []
    for da in (0.02, 0.01, 0.005):
        exact = np.abs(fixed_current_voltage(feeder13, {}, base.i, {"sub": 1 + da}))
        errs.append(np.max(np.abs(lin.predict_vmag([1 + da]) - exact)[free]))
    for big, small in zip(errs, errs[1:]):
        assert 3.5 <= big / small <= 4.5


def test_single_step_error_on_13_node(feeder13):
    inj = nominal_injections(feeder13, 0.5, 1.5)
    stats = validate_linearization(feeder13, [({"sub": 0}, inj)], [{"sub": 1}])
    assert stats.comparisons == 1
    assert stats.max_abs <= 2e-3


def test_no_tap_change_gives_empty_stats(feeder13):
    inj = nominal_injections(feeder13)
    stats = validate_linearization(feeder13, [({}, inj)], perturbations=[])
    assert stats.empty and stats.max_abs == 0.0


def test_single_step_perturbations_respect_limits(feeder40):
    moves = single_step_perturbations(feeder40, {"sub": 16, "reg": 0})
    assert {"sub": 17} not in moves
    assert {"sub": 15} in moves and {"reg": 1} in moves and {"reg": -1} in moves


def test_sensitivity_matches_finite_difference(feeder40):
    solver = FeederSolver(feeder40)
    inj = nominal_injections(feeder40, 1.0, 0.0)
    base = solver.solve({}, inj)
    lin = build_sensitivity(solver, {}, base)
    g = lin.gains[0] * feeder40.oltcs[0].ratio_step
    up = solver.solve({"sub": 1}, inj).vmag - base.vmag
    free = ~feeder40.slack_mask
    np.testing.assert_allclose(g[free], up[free], rtol=0.1)
    assert np.all(g[free] > 0)


def test_error_stats_csv(tmp_path):
    st_ = ErrorStats()
    st_.extend(3, [1, 2], [1e-4, -2e-4])
    st_.extend(7, [1], [5e-5])
    p = tmp_path / "errors.csv"
    st_.to_csv(p, ["a", "b", "c"])
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["step", "node", "E"]
    assert rows[1][:2] == ["3", "b"] and float(rows[2][2]) == -2e-4
    assert st_.max_abs == pytest.approx(2e-4)
    assert st_.mean_abs == pytest.approx((1e-4 + 2e-4 + 5e-5) / 3)
    counts, _ = st_.histogram(bins=4)
    assert counts.sum() == 3
    merged = st_.merge(ErrorStats([1], [0], [1e-3], comparisons=1))
    assert merged.comparisons == 3 and merged.max_abs == pytest.approx(1e-3)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_identity_random_networks(seed):
    assert identity_gap(np.random.default_rng(seed)) <= 1e-12
