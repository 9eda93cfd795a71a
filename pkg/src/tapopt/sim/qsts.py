"""Quasi-static time-series simulation of a feeder under a tap controller.

Each control interval: the plant is solved with the taps in service, the
controller sees that measurement (and, for OTC, perfect forecasts of the
next steps), the harness clamps the command to the ramp and tap limits,
and the plant is re-solved with the applied taps. Recorded voltages always
come from the nonlinear power flow.

Days are independent: every day starts at tap 0 with fresh controller
state.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import time
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from ..controllers import AtcState, VlcState, atc_step, vlc_step, vlc_triggered
from ..feeder import FeederModel, parse_feeder, scale_pv_penetration
from ..otc import ANSI_BAND, plan_step
from ..powerflow import FeederSolver, InjectionSet
from ..sensitivity import ErrorStats
from .profiles import DAY_SECONDS, MissingProfileError, ProfileError, read_profile_csv, synthetic_day
from .scenario import Scenario


# ------------------------------------------------------------ preparation


@dataclass
class PreparedScenario:
    scenario: Scenario
    model: FeederModel           # PV already scaled to the penetration level
    times: list                  # datetime per simulated step
    day_of_step: np.ndarray
    load_mult: np.ndarray        # (S, n_loads)
    pv_mult: np.ndarray          # (S, n_pvs)
    peak_load_kva: float
    load_matrix: np.ndarray      # (n_loads, n) complex p.u. per unit multiplier
    pv_matrix: np.ndarray        # (n_pvs, n)

    @property
    def n_steps(self) -> int:
        return len(self.times)

    def injections(self, k: int) -> InjectionSet:
        return InjectionSet(self.load_mult[k] @ self.load_matrix, self.pv_mult[k] @ self.pv_matrix)

    def day_slices(self):
        bounds = np.flatnonzero(np.diff(self.day_of_step)) + 1
        starts = np.concatenate([[0], bounds])
        stops = np.concatenate([bounds, [self.n_steps]])
        return [slice(int(a), int(b)) for a, b in zip(starts, stops)]


def _injection_matrices(model: FeederModel):
    n = model.n_nodes
    kva = model.base_mva * 1000.0
    L = np.zeros((len(model.loads), n), dtype=complex)
    for k, ld in enumerate(model.loads):
        L[k, ld.node] = complex(ld.p_kw, ld.q_kvar) / kva
    G = np.zeros((len(model.pvs), n))
    for k, pv in enumerate(model.pvs):
        G[k, pv.node] = pv.rated_kw / kva
    return L, G


def day_profiles(model: FeederModel, s: Scenario) -> dict:
    """Full-day multiplier arrays per profile name, keyed by date."""
    pv_names = [pv.profile for pv in model.pvs]
    load_names = [ld.profile for ld in model.loads]
    out = {}
    directory = s.profile_dir()
    cache = {}
    for d in s.dates:
        if directory is None:
            out[d] = synthetic_day(pv_names, load_names, d, s.weather, s.seed, s.resolution)
            continue
        day = {}
        for name in sorted(set(pv_names) | set(load_names)):
            if name not in cache:
                prof = read_profile_csv(directory / f"{name}.csv", name)
                if prof.resolution != s.resolution:
                    raise ProfileError(f"profile {name}: resolution {prof.resolution} s, scenario uses {s.resolution} s")
                cache[name] = prof
            day[name] = cache[name].day(d)
        out[d] = day
    return out


def prepare(s: Scenario, model: FeederModel | None = None) -> PreparedScenario:
    """Parse the feeder, resolve profiles and scale PV; no simulation yet."""
    if model is None:
        model = parse_feeder(s.feeder_path())
    profs = day_profiles(model, s)
    L, G = _injection_matrices(model)
    # peak of total apparent load over the scenario's full days
    peak = 0.0
    for d in s.dates:
        mult = np.array([profs[d][ld.profile] for ld in model.loads]).T      # (steps, loads)
        total = mult @ np.array([complex(ld.p_kw, ld.q_kvar) for ld in model.loads]) if model.loads else np.zeros(1)
        peak = max(peak, float(np.max(np.abs(total))))
    if model.pvs:
        model = scale_pv_penetration(model, s.penetration, peak)
        L, G = _injection_matrices(model)
    if s.dto_max is not None:
        model = dataclasses.replace(
            model, oltcs=tuple(dataclasses.replace(d, dto_max=s.dto_max) for d in model.oltcs))
    per_day = DAY_SECONDS // s.resolution
    k0 = int(round(s.start_hour * 3600 / s.resolution))
    k1 = int(round(s.stop_hour * 3600 / s.resolution))
    times, days, lm, pm = [], [], [], []
    for j, d in enumerate(s.dates):
        day = profs[d]
        for name, arr in day.items():
            if arr.size != per_day:
                raise ProfileError(f"profile {name}: {arr.size} samples for {d}, expected {per_day}")
        start = datetime.combine(d, datetime.min.time())
        times += [start + timedelta(seconds=k * s.resolution) for k in range(k0, k1)]
        days.append(np.full(k1 - k0, j))
        lm.append(np.array([day[ld.profile][k0:k1] for ld in model.loads]).T.reshape(k1 - k0, len(model.loads)))
        pm.append(np.array([day[pv.profile][k0:k1] for pv in model.pvs]).T.reshape(k1 - k0, len(model.pvs)))
    return PreparedScenario(s, model, times, np.concatenate(days), np.vstack(lm), np.vstack(pm), peak, L, G)


# ------------------------------------------------------------ controllers


def oltc_zones(model: FeederModel) -> dict:
    """Non-slack nodes reachable from each OLTC secondary without crossing another OLTC."""
    adj = [[] for _ in range(model.n_nodes)]
    for br in model.branches:
        adj[br.from_node].append(br.to_node)
        adj[br.to_node].append(br.from_node)
    slack = model.slack_mask
    zones = {}
    for d in model.oltcs:
        seen = set(d.secondary_nodes)
        stack = list(d.secondary_nodes)
        while stack:
            i = stack.pop()
            for k in adj[i]:
                if k not in seen:
                    seen.add(k)
                    stack.append(k)
        zones[d.id] = np.array(sorted(i for i in seen if not slack[i]), dtype=int)
    return zones


class _Controller:
    kind = ""

    def __init__(self, prep: PreparedScenario, solver: FeederSolver):
        self.prep = prep
        self.s = prep.scenario
        self.model = prep.model
        self.solver = solver

    def reset(self):
        pass

    def decide(self, k, day_end, taps, meas):
        raise NotImplementedError


class AtcController(_Controller):
    kind = "atc"

    def reset(self):
        self.states = {d.id: AtcState(tap=0, v_ref=self.s.atc_vref, bandwidth=self.s.atc_band,
                                      delay=self.s.atc_delay, tau_max=d.tau_max) for d in self.model.oltcs}

    def decide(self, k, day_end, taps, meas):
        cmd = {}
        for d in self.model.oltcs:
            st = self.states[d.id]
            if st.tap != taps[d.id]:
                st = AtcState(tap=taps[d.id], v_ref=st.v_ref, bandwidth=st.bandwidth, delay=st.delay,
                              timer=st.timer, tau_max=st.tau_max)
            v_local = float(np.mean(meas.vmag[list(d.secondary_nodes)]))
            st, _ = atc_step(st, v_local, float(self.s.resolution))
            self.states[d.id] = st
            cmd[d.id] = st.tap
        return cmd, {}


class VlcController(_Controller):
    kind = "vlc"

    def reset(self):
        self.zones = oltc_zones(self.model)
        self.states = {d.id: VlcState(tap=0, tau_max=d.tau_max, a_max=d.a_max, dto_max=d.dto_max)
                       for d in self.model.oltcs}
        self.unresolvable = 0

    def decide(self, k, day_end, taps, meas):
        cmd = {}
        for d in self.model.oltcs:
            zone = self.zones[d.id]
            st = self.states[d.id]
            if zone.size == 0:
                cmd[d.id] = taps[d.id]
                continue
            vz = meas.vmag[zone]
            u_max, u_min = float(vz.max()), float(vz.min())
            if vlc_triggered(u_max, u_min, ANSI_BAND[1], ANSI_BAND[1] - ANSI_BAND[0]):
                dec = vlc_step(st, u_max, u_min)
                self.unresolvable += int(dec.unresolvable)
                st = dec.state
            self.states[d.id] = st
            cmd[d.id] = st.tap
        return cmd, {}


class OtcController(_Controller):
    def __init__(self, prep, solver, mode):
        super().__init__(prep, solver)
        self.mode = mode
        self.kind = f"otc-{mode}"

    def reset(self):
        self.plan = None
        self.plan_index = 0

    def decide(self, k, day_end, taps, meas):
        s = self.s
        if s.commit_horizon and self.plan is not None and self.plan_index < self.plan.shape[1]:
            col = self.plan[:, self.plan_index]
            self.plan_index += 1
            return {i: int(col[p]) for p, i in enumerate(self.model.oltc_ids)}, {}
        T = s.horizon_steps if self.mode == "full" else 1
        forecasts = [self.prep.injections(j) for j in range(k, min(k + T, day_end))]
        res = plan_step(self.mode, self.solver, taps, forecasts, meas, w1=s.w1, w2=s.w2,
                        candidate_k=s.candidate_k, time_limit=s.time_limit)
        info = {"invoked": res.invoked, "solve_time": res.solve_time, "plan": res}
        if res.invoked and s.commit_horizon:
            self.plan = res.schedule.taps
            self.plan_index = 1
        return res.command, info


def make_controller(prep: PreparedScenario, solver: FeederSolver) -> _Controller:
    c = prep.scenario.controller
    if c == "atc":
        return AtcController(prep, solver)
    if c == "vlc":
        return VlcController(prep, solver)
    return OtcController(prep, solver, "full" if c == "otc-full" else "simplified")


# ------------------------------------------------------------ simulation


@dataclass
class SimulationResult:
    scenario: Scenario
    model: FeederModel
    times: list
    day_of_step: np.ndarray
    max_v: np.ndarray
    min_v: np.ndarray
    argmax_v: np.ndarray
    argmin_v: np.ndarray
    taps: np.ndarray             # (S, P) applied taps
    failed: np.ndarray
    solve_time: np.ndarray       # controller wall time per step
    milp_invoked: np.ndarray
    errors: ErrorStats
    peak_load_kva: float
    vmag: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    @property
    def over(self) -> np.ndarray:
        return self.max_v > ANSI_BAND[1]

    @property
    def under(self) -> np.ndarray:
        return self.min_v < ANSI_BAND[0]

    @property
    def violation(self) -> np.ndarray:
        return self.over | self.under

    def to_counts(self) -> np.ndarray:
        """TO count per day (rows) and OLTC (columns); each day starts from tap 0."""
        out = []
        for j in range(len(self.scenario.dates)):
            tp = self.taps[self.day_of_step == j]
            full = np.vstack([np.zeros((1, tp.shape[1]), dtype=int), tp])
            out.append(np.abs(np.diff(full, axis=0)).sum(axis=0))
        return np.array(out, dtype=int).reshape(len(self.scenario.dates), self.taps.shape[1])

    @property
    def total_to(self) -> int:
        return int(self.to_counts().sum())

    def summary(self) -> dict:
        """Scalar metrics; deterministic (no wall-clock values)."""
        ok = ~self.failed
        ids = self.model.oltc_ids
        to = self.to_counts()
        days = max(1, len(self.scenario.dates))
        out = {
            "feeder": self.model.name,
            "controller": self.scenario.controller,
            "penetration": self.scenario.penetration,
            "dates": [d.isoformat() for d in self.scenario.dates],
            "steps": int(self.max_v.size),
            "peak_load_kva": self.peak_load_kva,
            "max_v": float(self.max_v[ok].max()) if ok.any() else None,
            "min_v": float(self.min_v[ok].min()) if ok.any() else None,
            "over_voltage_steps": int(self.over[ok].sum()),
            "under_voltage_steps": int(self.under[ok].sum()),
            "violation_steps": int(self.violation[ok].sum()),
            "hosting_violation": bool(self.over[ok].any()),
            "total_to": self.total_to,
            "to_per_oltc": {i: int(to[:, p].sum()) for p, i in enumerate(ids)},
            "avg_to_per_day": {i: float(to[:, p].sum()) / days for p, i in enumerate(ids)},
            "failed_steps": int(self.failed.sum()),
            "milp_solves": int(self.milp_invoked.sum()),
        }
        if not self.errors.empty or self.scenario.controller.startswith("otc"):
            out["linearization"] = self.errors.summary()
        out.update({k: v for k, v in self.extra.items() if not k.startswith("_")})
        return out

    def timing(self) -> dict:
        st = self.solve_time[self.milp_invoked] if self.milp_invoked.any() else np.zeros(0)
        return {"controller_seconds_total": float(self.solve_time.sum()),
                "milp_seconds_mean": float(st.mean()) if st.size else 0.0,
                "milp_seconds_max": float(st.max()) if st.size else 0.0,
                "wall_seconds": self.extra.get("_wall", 0.0)}


def _clamp(model: FeederModel, old: dict, cmd: dict) -> dict:
    out = {}
    for d in model.oltcs:
        dto = d.dto_max
        t = int(cmd.get(d.id, old[d.id]))
        t = max(old[d.id] - dto, min(old[d.id] + dto, t))
        t = max(-d.tau_max, min(d.tau_max, t))
        assert abs(t - old[d.id]) <= dto and abs(t) <= d.tau_max
        out[d.id] = t
    return out


def run_qsts(s: Scenario, model: FeederModel | None = None, prep: PreparedScenario | None = None,
             keep_voltages: bool = False, progress=None) -> SimulationResult:
    """Simulate every step of the scenario; see the module docstring for the step order."""
    t_wall = time.perf_counter()
    prep = prep or prepare(s, model)
    model = prep.model
    solver = FeederSolver(model)
    ctrl = make_controller(prep, solver)
    ids = model.oltc_ids
    S, P = prep.n_steps, len(ids)
    free = np.flatnonzero(~model.slack_mask)
    max_v = np.zeros(S)
    min_v = np.zeros(S)
    amax = np.zeros(S, dtype=int)
    amin = np.zeros(S, dtype=int)
    taps_rec = np.zeros((S, P), dtype=int)
    failed = np.zeros(S, dtype=bool)
    solve_time = np.zeros(S)
    invoked = np.zeros(S, dtype=bool)
    vm_all = np.zeros((S, model.n_nodes)) if keep_voltages else None
    errors = ErrorStats()
    for sl in prep.day_slices():
        taps = model.zero_taps()
        ctrl.reset()
        v_prev = None
        last_mag = np.ones(model.n_nodes)
        for k in range(sl.start, sl.stop):
            inj = prep.injections(k)
            meas = solver.solve(taps, inj, v_init=v_prev)
            if meas.converged:
                t0 = time.perf_counter()
                cmd, info = ctrl.decide(k, sl.stop, dict(taps), meas)
                solve_time[k] = time.perf_counter() - t0
                invoked[k] = bool(info.get("invoked", False))
                new = _clamp(model, taps, cmd)
            else:
                new = dict(taps)
            if new != taps:
                plant = solver.solve(new, inj, v_init=meas.v if meas.converged else v_prev)
                plan = info.get("plan") if meas.converged else None
                if plant.converged and plan is not None and plan.sensitivity is not None:
                    pred = plan.sensitivity.predict_vmag_taps(model, new)
                    errors.extend(k, free, pred[free] - plant.vmag[free])
            else:
                plant = meas
            taps = new
            if plant.converged:
                v_prev = plant.v
                last_mag = plant.vmag
            else:
                failed[k] = True
            vm = last_mag[free]
            max_v[k], min_v[k] = vm.max(), vm.min()
            amax[k], amin[k] = free[np.argmax(vm)], free[np.argmin(vm)]
            taps_rec[k] = [taps[i] for i in ids]
            if vm_all is not None:
                vm_all[k] = last_mag
            if progress is not None:
                progress(k, S)
    res = SimulationResult(s, model, prep.times, prep.day_of_step, max_v, min_v, amax, amin, taps_rec,
                           failed, solve_time, invoked, errors, prep.peak_load_kva, vm_all)
    if isinstance(ctrl, VlcController):
        res.extra["vlc_unresolvable_steps"] = ctrl.unresolvable
    res.extra["_wall"] = time.perf_counter() - t_wall
    return res


# ------------------------------------------------------------ output


def write_outputs(res: SimulationResult, outdir, timing: bool = True) -> dict:
    """timeseries.csv, summary.json, errors.csv (OTC only) and, if ``timing``, timing.json.

    Everything but timing.json is a deterministic function of the scenario.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    ids = res.model.oltc_ids
    names = [n.name for n in res.model.nodes]
    paths = {}
    p = outdir / "timeseries.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "time", "max_v", "min_v", "max_node", "min_node", *[f"tap_{i}" for i in ids],
                    "violation", "failed"])
        for k in range(res.max_v.size):
            w.writerow([k, res.times[k].isoformat(), f"{res.max_v[k]:.10f}", f"{res.min_v[k]:.10f}",
                        names[res.argmax_v[k]], names[res.argmin_v[k]], *res.taps[k].tolist(),
                        int(res.violation[k]), int(res.failed[k])])
    paths["timeseries"] = p
    summary = res.summary()
    p = outdir / "summary.json"
    p.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    paths["summary"] = p
    if res.scenario.controller.startswith("otc"):
        p = outdir / "errors.csv"
        res.errors.to_csv(p, names)
        paths["errors"] = p
    if timing:
        p = outdir / "timing.json"
        p.write_text(json.dumps(res.timing(), indent=2, sort_keys=True) + "\n")
        paths["timing"] = p
    return paths


__all__ = ["PreparedScenario", "SimulationResult", "prepare", "run_qsts", "write_outputs", "day_profiles",
           "oltc_zones", "make_controller", "MissingProfileError"]
