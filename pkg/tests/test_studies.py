import numpy as np
import pytest

from tapopt.sim.scenario import Scenario
from tapopt.sim.studies import (
    HostingResult, benchmark_instances, hosting_capacity_sweep, linearization_check, parse_levels,
    runtime_benchmark, weight_sweep, write_runtime_table, write_weight_table,
)

SHORT = Scenario(feeder="feeder13", weather="clear", start_hour=11, stop_hour=12)


def test_parse_levels():
    assert parse_levels("0:200:25") == [0, 25, 50, 75, 100, 125, 150, 175, 200]
    assert parse_levels("10, 20") == [10.0, 20.0]
    with pytest.raises(ValueError):
        parse_levels("0:10")


def test_hosting_threshold_and_ratio(tmp_path):
    r = HostingResult([0, 50, 100, 150], {"atc": [False, False, True, True], "otc-full": [False] * 3 + [True]},
                      {"atc": [1.0, 1.02, 1.06, 1.08], "otc-full": [1.0, 1.01, 1.03, 1.051]})
    assert r.threshold("atc") == 100 and r.threshold("otc-full") == 150
    assert r.ratio() == pytest.approx(1.5)
    r.write_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "penetration,atc_violation,atc_max_v,otc-full_violation,otc-full_max_v"
    assert lines[3].startswith("100,1,1.060000")


def test_hosting_none_when_clean():
    r = HostingResult([0, 50], {"atc": [False, False]}, {"atc": [1.0, 1.01]})
    assert r.threshold("atc") is None and r.ratio("atc", "atc") is None


def test_hosting_sweep_small():
    res = hosting_capacity_sweep(SHORT, [0, 200], controllers=("atc",))
    assert res.verdicts["atc"] == [False, True]
    with pytest.raises(ValueError):
        hosting_capacity_sweep(SHORT, [50])


def test_hosting_sweep_parallel_matches_serial():
    a = hosting_capacity_sweep(SHORT, [0, 150], controllers=("atc", "vlc"))
    b = hosting_capacity_sweep(SHORT, [0, 150], controllers=("atc", "vlc"), jobs=2)
    assert a.verdicts == b.verdicts and a.max_v == b.max_v


def test_weight_sweep_rows(tmp_path):
    rows = weight_sweep(SHORT.with_overrides(penetration=150), [0.0, 0.04])
    assert [r["w2"] for r in rows] == [0.0, 0.04]
    assert rows[0]["total_to"] >= rows[1]["total_to"]
    write_weight_table(rows, tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().startswith("w2,max_v,min_v,total_to")


def test_benchmark_instances_shape():
    model, inst = benchmark_instances(3, n_nodes=90, horizon=4, count=2)
    assert model.n_nodes == 90 and len(inst) == 2
    assert inst[0].P == 3 and inst[0].T == 4


def test_runtime_benchmark_fit(tmp_path):
    rows, fit = runtime_benchmark([1, 2, 3, 4], n_nodes=60, horizon=2, repeats=2)
    assert [r.P for r in rows] == [1, 2, 3, 4]
    assert len(fit) == 4
    np.testing.assert_allclose(np.polyval(fit, [r.P for r in rows]), [r.mean_s for r in rows], atol=1e-9)
    write_runtime_table(rows, fit, tmp_path / "r.csv")
    assert "cubic fit" in (tmp_path / "r.csv").read_text()
    assert runtime_benchmark([1], n_nodes=60, horizon=2, repeats=1)[1] is None


def test_linearization_check_held_taps():
    stats, model = linearization_check(SHORT.with_overrides(penetration=150), stride=30, taps={"sub": -3})
    assert stats.comparisons == 2 * 4      # +-1 at each of 4 sampled steps
    assert stats.max_abs < 3e-3
    with pytest.raises(ValueError):
        linearization_check(SHORT, stride=0)
