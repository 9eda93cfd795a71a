import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import enumerate_optimum, random_horizon
from tapopt.feeder import scale_pv_penetration
from tapopt.otc import (
    HorizonData, build_milp, oltc_terminal_nodes, plan_step, select_candidate_nodes, solve_milp, violates,
)
from tapopt.powerflow import FeederSolver, nominal_injections


def test_matches_enumeration_on_random_instances():
    rng = np.random.default_rng(11)
    checked = 0
    for P in (1, 2):
        for T in (1, 2, 3, 4):
            reps = 10 if P == 1 else 4
            for _ in range(reps):
                h = random_horizon(rng, P=P, T=T, n=int(rng.integers(2, 7)))
                w2 = float(rng.choice([0.0, 0.002, 0.005, 0.02]))
                sched = solve_milp(build_milp(h, 1.0, w2))
                assert sched.status == "optimal"
                assert sched.objective == pytest.approx(enumerate_optimum(h, 1.0, w2), abs=1e-9)
                checked += 1
    assert checked >= 50


def test_schedule_objective_consistent_with_prediction():
    rng = np.random.default_rng(4)
    h = random_horizon(rng, P=2, T=3)
    sched = solve_milp(build_milp(h, 1.0, 0.005))
    pred = h.predict_vmag(sched.taps)
    dev = max(np.max(np.abs(pred[t, c] - 1)) for t, c in enumerate(h.candidates))
    assert sched.j1 == pytest.approx(dev, abs=1e-12)
    full = np.concatenate([h.tau0[:, None], sched.taps], axis=1)
    assert sched.j2 == np.abs(np.diff(full, axis=1)).sum()


def test_row_count_and_layout():
    rng = np.random.default_rng(0)
    h = random_horizon(rng, P=2, T=3, n=8)
    m = build_milp(h)
    assert m.A.shape[0] == sum(2 * len(c) for c in h.candidates) + 4 * h.P * h.T
    assert m.A.shape[1] == 2 * h.P * h.T + 1
    assert m.var_names[0] == "tau_t0_oltc0" and m.var_names[1] == "tau_t0_oltc1"
    assert m.var_names[h.P * h.T] == "u_t0_oltc0" and m.var_names[-1] == "eta"
    assert m.integer.sum() == h.P * h.T
    assert m.c[-1] == 1.0 and np.all(m.c[h.P * h.T:-1] == 0.005)


def test_smallest_instance():
    h = HorizonData(v0=[[1.03]], sens=[[[0.8]]], candidates=([0],), tau0=[0], tau_max=[16], a_max=[1.1],
                    dto_max=[1])
    sched = solve_milp(build_milp(h, 1.0, 0.0))
    assert sched.taps.tolist() == [[-1]]
    assert sched.j1 == pytest.approx(0.03 - 0.8 * 0.00625)


def test_zero_sensitivity_holds_taps():
    h = HorizonData(v0=np.full((3, 4), 1.07), sens=np.zeros((3, 2, 4)), candidates=([0, 1],) * 3,
                    tau0=[2, -3], tau_max=[16, 16], a_max=[1.1, 1.1], dto_max=[1, 1])
    sched = solve_milp(build_milp(h, 1.0, 0.005))
    assert sched.taps.tolist() == [[2, 2, 2], [-3, -3, -3]]
    assert sched.total_to == 0


def test_ramp_limit_respected_and_override():
    h = HorizonData(v0=[[1.08]], sens=[[[0.8]]], candidates=([0],), tau0=[0], tau_max=[16], a_max=[1.1],
                    dto_max=[1])
    assert solve_milp(build_milp(h, 1.0, 0.0)).taps[0, 0] == -1
    assert solve_milp(build_milp(h, 1.0, 0.0, dto_max=4)).taps[0, 0] == -4


def test_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension mismatch"):
        HorizonData(v0=np.ones((2, 3)), sens=np.zeros((2, 1, 4)), candidates=([0], [0]), tau0=[0],
                    tau_max=[16], a_max=[1.1], dto_max=[1])
    with pytest.raises(ValueError, match="candidate"):
        HorizonData(v0=np.ones((1, 3)), sens=np.zeros((1, 1, 3)), candidates=([5],), tau0=[0],
                    tau_max=[16], a_max=[1.1], dto_max=[1])


def test_time_limit_falls_back_to_hold():
    rng = np.random.default_rng(8)
    h = random_horizon(rng, P=2, T=4, n=6)
    sched = solve_milp(build_milp(h, 1.0, 0.0), max_nodes=0)
    assert sched.status == "node_limit" and sched.fallback
    assert np.all(sched.taps == h.tau0[:, None])


def test_lp_text_dump():
    h = HorizonData(v0=[[1.03]], sens=[[[0.8]]], candidates=([0],), tau0=[0], tau_max=[16], a_max=[1.1],
                    dto_max=[1])
    text = build_milp(h).to_lp_text()
    assert text.startswith("\\") and "Minimize" in text and "Generals" in text
    assert " tau_t0_oltc0" in text and text.rstrip().endswith("End")


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_tap_operations_monotone_in_w2(seed):
    h = random_horizon(np.random.default_rng(seed), P=1, T=3)
    tos = [solve_milp(build_milp(h, 1.0, w2)).j2 for w2 in (0.0, 0.002, 0.01, 0.05)]
    assert all(a >= b for a, b in zip(tos, tos[1:]))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_optimum_never_worse_than_holding(seed):
    h = random_horizon(np.random.default_rng(seed), P=2, T=2)
    m = build_milp(h, 1.0, 0.005)
    hold_obj, _, _ = m.objective_parts(np.repeat(h.tau0[:, None], h.T, axis=1))
    assert solve_milp(m).objective <= hold_obj + 1e-12


def test_candidate_selection_extremes_and_ties():
    v = np.array([1.0, 1.02, 0.97, 1.02, 1.05, 0.96])
    (c,) = select_candidate_nodes(v, oltc_nodes=[0], k=0)
    assert c.tolist() == [0, 4, 5]
    (c,) = select_candidate_nodes(v, k=1)
    assert c.tolist() == [1, 2, 4, 5]        # 1.02 tie resolved to the lower index


def test_candidate_includes_feeder_end(feeder13):
    m = scale_pv_penetration(feeder13, 150)
    sol = FeederSolver(m).solve({}, nominal_injections(m, 0.3, 0.9))
    (c,) = select_candidate_nodes(sol.vmag, oltc_terminal_nodes(m), k=2)
    names = [m.nodes[i].name for i in c]
    assert "n5.a" in names
    assert int(np.argmax(sol.vmag)) == m.node_index("n5.a")


@pytest.fixture(scope="module")
def solver13(feeder13):
    return FeederSolver(scale_pv_penetration(feeder13, 150))


def test_simplified_idle_inside_band(solver13):
    m = solver13.model
    inj = nominal_injections(m, 0.5, 0.2)
    sol = solver13.solve({}, inj)
    free = ~m.slack_mask
    assert np.all((sol.vmag[free] > 0.96) & (sol.vmag[free] < 1.04))
    res = plan_step("simplified", solver13, {}, [inj])
    assert not res.invoked and res.command == {"sub": 0}


def test_full_mode_moves_down_under_overvoltage(solver13):
    m = solver13.model
    inj = nominal_injections(m, 0.3, 0.9)
    res = plan_step("full", solver13, {}, [inj] * 3)
    assert res.invoked and res.command["sub"] == -1
    assert res.verified.vmag.max() < solver13.solve({}, inj).vmag.max()


def test_simplified_raises_under_undervoltage(solver13):
    m = solver13.model
    inj = nominal_injections(m, 1.0, 0.0)
    assert violates(solver13.solve({}, inj).vmag, mask=~m.slack_mask).any()
    res = plan_step("simplified", solver13, {}, [inj])
    assert res.invoked and res.command["sub"] == 1


def test_plan_rejects_bad_mode(solver13):
    with pytest.raises(ValueError):
        plan_step("greedy", solver13, {}, [nominal_injections(solver13.model)])
