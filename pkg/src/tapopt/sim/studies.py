"""Parameter studies built on run_qsts: PV hosting capacity, objective weights, solver runtime."""
from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..otc import HorizonData, build_milp, oltc_terminal_nodes, select_candidate_nodes, solve_milp
from ..powerflow import FeederSolver
from ..sensitivity import build_sensitivity
from .fixtures import generate_feeder
from .qsts import prepare, run_qsts
from .scenario import Scenario


def parse_levels(text: str) -> list:
    """``"0:200:25"`` (inclusive) or ``"0,50,100"``."""
    text = text.strip()
    if ":" in text:
        parts = [float(x) for x in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise ValueError(f"level range must be start:stop:step, got {text!r}")
        a, b, step = parts
        n = int(np.floor((b - a) / step + 1e-9)) + 1
        return [a + k * step for k in range(n)]
    return [float(x) for x in text.split(",") if x.strip()]


def _summary_of(s: Scenario) -> dict:
    return run_qsts(s).summary()


def _map(fn, items, jobs):
    if jobs and jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


@dataclass
class HostingResult:
    levels: list
    verdicts: dict             # controller -> list of bool (over-voltage seen) per level
    max_v: dict                # controller -> list of max |V| per level

    def threshold(self, controller):
        """First level with an over-voltage, or None if none violates."""
        for lvl, bad in zip(self.levels, self.verdicts[controller]):
            if bad:
                return lvl
        return None

    def ratio(self, numer="otc-full", denom="atc"):
        a, b = self.threshold(numer), self.threshold(denom)
        if a is None or b is None or b == 0:
            return None
        return a / b

    def rows(self):
        ctrls = list(self.verdicts)
        for k, lvl in enumerate(self.levels):
            yield [lvl] + [x for c in ctrls for x in (int(self.verdicts[c][k]), self.max_v[c][k])]

    def write_csv(self, path):
        ctrls = list(self.verdicts)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["penetration"] + [x for c in ctrls for x in (f"{c}_violation", f"{c}_max_v")])
            for row in self.rows():
                w.writerow([f"{row[0]:g}"] + [f"{x:.6f}" if isinstance(x, float) else x for x in row[1:]])


def hosting_capacity_sweep(s: Scenario, levels, controllers=("atc", "otc-full"), jobs=1) -> HostingResult:
    """Over-voltage verdict (any step with max |V| > 1.05) per level and controller."""
    levels = [float(x) for x in levels]
    if len(levels) < 2:
        raise ValueError("hosting sweep needs at least two levels")
    runs = [s.with_overrides(controller=c, penetration=lvl) for c in controllers for lvl in levels]
    out = _map(_summary_of, runs, jobs)
    verdicts, vmax = {}, {}
    for j, c in enumerate(controllers):
        chunk = out[j * len(levels):(j + 1) * len(levels)]
        verdicts[c] = [bool(r["hosting_violation"]) for r in chunk]
        vmax[c] = [float(r["max_v"]) for r in chunk]
    return HostingResult(levels, verdicts, vmax)


def weight_sweep(s: Scenario, w2_values, jobs=1) -> list:
    """One OTC-full run per w2; rows of (w2, max |V|, min |V|, total TO)."""
    runs = [s.with_overrides(controller="otc-full", w2=float(w)) for w in w2_values]
    out = _map(_summary_of, runs, jobs)
    return [{"w2": float(w), "max_v": r["max_v"], "min_v": r["min_v"], "total_to": r["total_to"],
             "violation_steps": r["violation_steps"]} for w, r in zip(w2_values, out)]


def write_weight_table(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["w2", "max_v", "min_v", "total_to", "violation_steps"])
        for r in rows:
            w.writerow([f"{r['w2']:g}", f"{r['max_v']:.6f}", f"{r['min_v']:.6f}", r["total_to"], r["violation_steps"]])


# ------------------------------------------------------------ runtime


def benchmark_instances(n_oltcs, n_nodes=1000, horizon=10, count=20, seed=0, penetration=150.0,
                        start_hour=10.0, stride=3):
    """``count`` MILP instances from consecutive midday windows of a generated feeder."""
    model = generate_feeder(n_nodes, n_oltcs, seed)
    s = Scenario(feeder="generated", controller="otc-full", penetration=penetration, seed=seed,
                 start_hour=start_hour, stop_hour=min(24.0, start_hour + 3.0), horizon_steps=horizon)
    prep = prepare(s, model)
    model = prep.model
    solver = FeederSolver(model)
    taps = model.zero_taps()
    terminals = oltc_terminal_nodes(model)
    out = []
    v_prev = None
    for j in range(count):
        k = j * stride
        points = []
        for t in range(horizon):
            sol = solver.solve(taps, prep.injections(k + t), v_init=v_prev)
            v_prev = sol.v
            points.append(sol)
        lin = [build_sensitivity(solver, taps, p) for p in points]
        cands = select_candidate_nodes(np.array([p.vmag for p in points]), terminals)
        h = HorizonData.from_sensitivities(model, lin, cands, taps)
        out.append(build_milp(h))
    return model, out


@dataclass
class RuntimeRow:
    P: int
    n_nodes: int
    solves: int
    mean_s: float
    std_s: float
    max_s: float
    mean_nodes: float


def runtime_benchmark(oltc_counts, n_nodes=1000, horizon=10, repeats=20, seed=0, time_limit=None):
    """Time ``solve_milp`` alone (no power flow) for each OLTC count.

    Returns the rows and, with four or more counts, the coefficients of a
    least-squares cubic ``mean_s(P)`` (highest power first).
    """
    rows = []
    for P in oltc_counts:
        model, inst = benchmark_instances(P, n_nodes, horizon, repeats, seed)
        times, nodes = [], []
        for m in inst:
            t0 = time.perf_counter()
            sched = solve_milp(m, time_limit=time_limit)
            times.append(time.perf_counter() - t0)
            nodes.append(sched.nodes)
        t = np.array(times)
        rows.append(RuntimeRow(int(P), model.n_nodes, len(t), float(t.mean()), float(t.std()), float(t.max()),
                               float(np.mean(nodes))))
    fit = None
    if len(rows) >= 4:
        fit = np.polyfit([r.P for r in rows], [r.mean_s for r in rows], 3).tolist()
    return rows, fit


def write_runtime_table(rows, fit, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["P", "n_nodes", "solves", "mean_s", "std_s", "max_s", "mean_bb_nodes"])
        for r in rows:
            w.writerow([r.P, r.n_nodes, r.solves, f"{r.mean_s:.6f}", f"{r.std_s:.6f}", f"{r.max_s:.6f}",
                        f"{r.mean_nodes:.2f}"])
        if fit is not None:
            w.writerow([])
            w.writerow(["# cubic fit a3,a2,a1,a0"] + [f"{c:.6g}" for c in fit])


def write_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# ------------------------------------------------------------ linearization


def linearization_check(s: Scenario, stride: int = 10, taps=None):
    """Single-step tap perturbations at every ``stride``-th step of the scenario.

    Taps are held at ``taps`` (default: all zero) so every step linearizes
    around the same tap setting; returns the ErrorStats and the model.
    """
    from ..sensitivity import validate_linearization

    if stride < 1:
        raise ValueError("stride must be >= 1")
    prep = prepare(s)
    model = prep.model
    held = {**model.zero_taps(), **(taps or {})}
    steps = ((held, prep.injections(k)) for k in range(0, prep.n_steps, stride))
    return validate_linearization(model, steps), model
