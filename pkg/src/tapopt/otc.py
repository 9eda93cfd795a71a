"""Optimal tap control: multi-step MILP over the forecast horizon.

Decision variables are integer tap positions tau[t, p]. Node voltage
magnitudes are affine in the taps through the linear sensitivity model,
the worst deviation from 1 p.u. over candidate nodes and steps is bounded
by an epigraph variable ``eta``, and tap operations are counted through
``u[t, p] >= |tau[t, p] - tau[t-1, p]|`` with ``tau[-1, p]`` the tap in
service. The objective is ``w1 * eta + w2 * sum(u)``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .feeder import FeederModel
from .optim.bnb import InfeasibleProblem, branch_and_bound
from .powerflow import FeederSolver, InjectionSet, VoltageSolution
from .sensitivity import SensitivityModel, build_sensitivity

ANSI_BAND = (0.95, 1.05)
DEFAULT_W1 = 1.0
DEFAULT_W2 = 0.005


@dataclass(frozen=True)
class HorizonData:
    """Linearization data for T steps and P OLTCs.

    ``v0[t]`` is the complex operating point of step t, ``sens[t, p]`` the
    voltage change per unit ratio change of OLTC p, ``candidates[t]`` the
    node indices entering the voltage objective.
    """

    v0: np.ndarray
    sens: np.ndarray
    candidates: tuple
    tau0: np.ndarray
    tau_max: np.ndarray
    a_max: np.ndarray
    dto_max: np.ndarray
    oltc_ids: tuple = ()

    def __post_init__(self):
        v0 = np.atleast_2d(np.asarray(self.v0, dtype=complex))
        object.__setattr__(self, "v0", v0)
        T, n = v0.shape
        sens = np.asarray(self.sens, dtype=complex)
        P = np.asarray(self.tau0).size
        if sens.shape != (T, P, n):
            raise ValueError(f"dimension mismatch: sens {sens.shape}, expected {(T, P, n)}")
        object.__setattr__(self, "sens", sens)
        for name in ("tau0", "tau_max", "dto_max"):
            arr = np.asarray(getattr(self, name), dtype=int).reshape(-1)
            if arr.size != P:
                raise ValueError(f"dimension mismatch: {name} has {arr.size} entries, expected {P}")
            object.__setattr__(self, name, arr)
        a_max = np.asarray(self.a_max, dtype=float).reshape(-1)
        if a_max.size != P:
            raise ValueError("dimension mismatch: a_max")
        object.__setattr__(self, "a_max", a_max)
        if T < 1:
            raise ValueError("horizon needs at least one step")
        if len(self.candidates) != T:
            raise ValueError(f"dimension mismatch: {len(self.candidates)} candidate sets for {T} steps")
        cands = tuple(np.unique(np.asarray(c, dtype=int)) for c in self.candidates)
        for c in cands:
            if c.size == 0:
                raise ValueError("empty candidate set")
            if c.min() < 0 or c.max() >= n:
                raise ValueError("dimension mismatch: candidate node out of range")
        object.__setattr__(self, "candidates", cands)
        if np.any(np.abs(self.tau0) > self.tau_max):
            raise ValueError("current tap outside its range")
        if not self.oltc_ids:
            object.__setattr__(self, "oltc_ids", tuple(f"oltc{p}" for p in range(P)))

    @property
    def T(self) -> int:
        return self.v0.shape[0]

    @property
    def P(self) -> int:
        return self.tau0.size

    @property
    def vmag0(self) -> np.ndarray:
        return np.abs(self.v0)

    @property
    def gains(self) -> np.ndarray:
        """d|v|/da, shape (T, P, n)."""
        v0 = self.v0[:, None, :]
        return (v0.real * self.sens.real + v0.imag * self.sens.imag) / np.abs(v0)

    @property
    def ratio_step(self) -> np.ndarray:
        return (self.a_max - 1.0) / self.tau_max

    def with_candidates(self, candidates) -> "HorizonData":
        return HorizonData(self.v0, self.sens, tuple(candidates), self.tau0, self.tau_max,
                           self.a_max, self.dto_max, self.oltc_ids)

    def predict_vmag(self, taps) -> np.ndarray:
        """Linearized |V| for a tap trajectory ``taps`` of shape (P, T); returns (T, n)."""
        taps = np.asarray(taps, dtype=float).reshape(self.P, self.T)
        da = (taps - self.tau0[:, None]) * self.ratio_step[:, None]       # (P, T)
        return self.vmag0 + np.einsum("tpn,pt->tn", self.gains, da)

    @classmethod
    def from_sensitivities(cls, model: FeederModel, points: Sequence[SensitivityModel], candidates,
                           taps: Mapping[str, int]):
        devs = model.oltcs
        return cls(
            v0=np.array([pt.v0 for pt in points]),
            sens=np.array([pt.sens for pt in points]).reshape(len(points), len(devs), model.n_nodes),
            candidates=tuple(candidates),
            tau0=[taps.get(d.id, 0) for d in devs],
            tau_max=[d.tau_max for d in devs],
            a_max=[d.a_max for d in devs],
            dto_max=[d.dto_max for d in devs],
            oltc_ids=tuple(d.id for d in devs),
        )


def select_candidate_nodes(vmag, oltc_nodes=(), k=5) -> tuple:
    """Per-step node sets for the voltage objective.

    Each set holds the highest and lowest node, the ``k`` next highest and
    lowest, and every OLTC terminal node. Ties go to the lowest index.
    """
    vmag = np.atleast_2d(np.asarray(vmag, dtype=float))
    fixed = np.asarray(list(oltc_nodes), dtype=int)
    out = []
    for row in vmag:
        order = np.argsort(row, kind="stable")
        top = np.argsort(-row, kind="stable")[: k + 1]
        out.append(np.unique(np.concatenate([top, order[: k + 1], fixed])))
    return tuple(out)


def oltc_terminal_nodes(model: FeederModel) -> list:
    nodes = []
    for d in model.oltcs:
        nodes += list(d.primary_nodes) + list(d.secondary_nodes)
    return sorted(set(nodes))


@dataclass
class MilpInstance:
    """``min c @ x  s.t.  A @ x <= b``, bounds, integrality of the tap block.

    Variable layout: ``tau[t, p]`` at ``t * P + p``, then ``u[t, p]`` at
    ``P * T + t * P + p``, then ``eta``.
    """

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    integer: np.ndarray
    var_names: list
    row_names: list
    P: int
    T: int
    tau0: np.ndarray
    dto_max: np.ndarray
    w1: float
    w2: float
    epi_A: np.ndarray = field(repr=False)      # eta >= epi_A @ tau - epi_b
    epi_b: np.ndarray = field(repr=False)
    oltc_ids: tuple = ()

    @property
    def n_tau(self) -> int:
        return self.P * self.T

    @property
    def eta_index(self) -> int:
        return 2 * self.n_tau

    def tau_vector(self, taps) -> np.ndarray:
        """(P, T) trajectory -> flat t-major tap block."""
        return np.asarray(taps, dtype=float).reshape(self.P, self.T).T.reshape(-1)

    def tau_matrix(self, z) -> np.ndarray:
        """Flat tap block -> (P, T) integer trajectory."""
        return np.rint(np.asarray(z[: self.n_tau])).astype(int).reshape(self.T, self.P).T

    def feasible_taps(self, taps) -> bool:
        taps = np.asarray(taps).reshape(self.P, self.T)
        lo, hi = self.lb[: self.n_tau], self.ub[: self.n_tau]
        z = self.tau_vector(taps)
        if np.any(z < lo - 1e-9) or np.any(z > hi + 1e-9):
            return False
        full = np.concatenate([self.tau0[:, None], taps], axis=1)
        return bool(np.all(np.abs(np.diff(full, axis=1)) <= self.dto_max[:, None] + 1e-9))

    def complete(self, z) -> np.ndarray | None:
        """Optimal continuous part for an integer tap block ``z``; None if infeasible."""
        taps = self.tau_matrix(z)
        if not self.feasible_taps(taps):
            return None
        full = np.concatenate([self.tau0[:, None], taps], axis=1)
        u = np.abs(np.diff(full, axis=1)).T.reshape(-1)
        zz = self.tau_vector(taps)
        eta = max(0.0, float(np.max(self.epi_A @ zz - self.epi_b, initial=0.0)))
        return np.concatenate([zz, u, [eta]])

    def objective_parts(self, taps):
        x = self.complete(self.tau_vector(taps))
        if x is None:
            raise ValueError("infeasible tap trajectory")
        j1 = x[self.eta_index]
        j2 = float(np.sum(x[self.n_tau: 2 * self.n_tau]))
        return float(self.w1 * j1 + self.w2 * j2), float(j1), j2

    def to_lp_text(self) -> str:
        """Human-readable LP-format dump."""
        def expr(coefs):
            terms = [f"{'+' if v >= 0 else '-'} {abs(v):.12g} {self.var_names[i]}"
                     for i, v in enumerate(coefs) if v != 0]
            return " ".join(terms) if terms else "0"

        lines = ["\\ optimal tap control", "Minimize", f" obj: {expr(self.c)}", "Subject To"]
        for name, row, rhs in zip(self.row_names, self.A, self.b):
            lines.append(f" {name}: {expr(row)} <= {rhs:.12g}")
        lines.append("Bounds")
        for name, lo, hi in zip(self.var_names, self.lb, self.ub):
            hi_s = "+inf" if np.isinf(hi) else f"{hi:.12g}"
            lines.append(f" {lo:.12g} <= {name} <= {hi_s}")
        lines.append("Generals")
        lines.append(" " + " ".join(n for n, f in zip(self.var_names, self.integer) if f))
        lines.append("End")
        return "\n".join(lines) + "\n"


def build_milp(h: HorizonData, w1=DEFAULT_W1, w2=DEFAULT_W2, dto_max=None) -> MilpInstance:
    """Assemble the tap-scheduling MILP.

    Rows per step t: two epigraph rows per candidate node, then for each
    OLTC two rows bounding ``u`` and two ramp rows ``|tau_t - tau_{t-1}| <=
    dto_max``; ``T * (2 |C| + 4 P)`` rows when every step has ``|C|``
    candidates.
    """
    P, T = h.P, h.T
    dto = h.dto_max if dto_max is None else np.broadcast_to(np.asarray(dto_max, dtype=int), (P,)).copy()
    nt = P * T
    nvar = 2 * nt + 1
    eta = 2 * nt
    step = h.ratio_step
    gains = h.gains
    vmag = h.vmag0

    def tau(t, p):
        return t * P + p

    rows, rhs, names = [], [], []
    epi_rows, epi_rhs = [], []
    ids = h.oltc_ids
    for t in range(T):
        cand = h.candidates[t]
        coef = gains[t][:, cand].T * step            # (|C|, P) d|v|/dtau
        const = vmag[t, cand] - coef @ h.tau0        # |v| = const + coef @ tau_t
        for k, node in enumerate(cand):
            hi = np.zeros(nvar)
            for p in range(P):
                hi[tau(t, p)] = coef[k, p]
            lo = -hi
            hi[eta] = -1.0
            lo[eta] = -1.0
            rows += [hi, lo]
            rhs += [1.0 - const[k], const[k] - 1.0]
            names += [f"over_t{t}_n{node}", f"under_t{t}_n{node}"]
            epi_rows += [hi[:nt], lo[:nt]]
            epi_rhs += [1.0 - const[k], const[k] - 1.0]
        for p in range(P):
            for sign, tag in ((1.0, "pos"), (-1.0, "neg")):
                r = np.zeros(nvar)
                r[tau(t, p)] = sign
                r[nt + tau(t, p)] = -1.0
                if t > 0:
                    r[tau(t - 1, p)] = -sign
                    rhs.append(0.0)
                else:
                    rhs.append(sign * h.tau0[p])
                rows.append(r)
                names.append(f"to_{tag}_t{t}_{ids[p]}")
            for sign, tag in ((1.0, "up"), (-1.0, "down")):
                r = np.zeros(nvar)
                r[tau(t, p)] = sign
                if t > 0:
                    r[tau(t - 1, p)] = -sign
                    rhs.append(float(dto[p]))
                else:
                    rhs.append(float(dto[p]) + sign * h.tau0[p])
                rows.append(r)
                names.append(f"ramp_{tag}_t{t}_{ids[p]}")

    c = np.zeros(nvar)
    c[nt:2 * nt] = w2
    c[eta] = w1
    lb = np.concatenate([np.tile(-h.tau_max, T), np.zeros(nt), [0.0]]).astype(float)
    ub = np.concatenate([np.tile(h.tau_max, T), np.full(nt, np.inf), [np.inf]]).astype(float)
    integer = np.zeros(nvar, dtype=bool)
    integer[:nt] = True
    var_names = ([f"tau_t{t}_{ids[p]}" for t in range(T) for p in range(P)]
                 + [f"u_t{t}_{ids[p]}" for t in range(T) for p in range(P)] + ["eta"])
    return MilpInstance(
        c=c, A=np.array(rows), b=np.array(rhs), lb=lb, ub=ub, integer=integer,
        var_names=var_names, row_names=names, P=P, T=T, tau0=h.tau0.copy(), dto_max=np.asarray(dto),
        w1=float(w1), w2=float(w2), epi_A=np.array(epi_rows), epi_b=np.array(epi_rhs), oltc_ids=ids,
    )


@dataclass
class TapSchedule:
    taps: np.ndarray           # (P, T) integer positions
    objective: float
    j1: float
    j2: float
    status: str
    nodes: int
    lp_solves: int
    wall_time: float
    gap: float = 0.0
    root_bound: float = 0.0
    fallback: bool = False
    oltc_ids: tuple = ()

    def first_step(self) -> dict:
        return {i: int(self.taps[p, 0]) for p, i in enumerate(self.oltc_ids)}

    @property
    def total_to(self) -> int:
        return int(round(self.j2))


def _round_heuristic(m: MilpInstance):
    lo = m.lb[: m.n_tau].reshape(m.T, m.P)
    hi = m.ub[: m.n_tau].reshape(m.T, m.P)

    def propose(x):
        z = x[: m.n_tau].reshape(m.T, m.P)
        out = np.empty_like(z)
        prev = m.tau0.astype(float)
        for t in range(m.T):
            r = np.clip(np.rint(z[t]), prev - m.dto_max, prev + m.dto_max)
            r = np.clip(r, lo[t], hi[t])
            out[t] = r
            prev = r
        return [out.reshape(-1)]

    return propose


def _tie_key(m: MilpInstance):
    def key(x):
        taps = m.tau_matrix(x)
        full = np.concatenate([m.tau0[:, None], taps], axis=1)
        return (int(np.abs(np.diff(full, axis=1)).sum()), int(np.abs(taps).sum()), tuple(taps.reshape(-1)))
    return key


def solve_milp(m: MilpInstance, time_limit=None, max_nodes=None, branching="reliability") -> TapSchedule:
    """Branch and bound with the bounded simplex; returns the optimal tap schedule.

    The hold-current-taps trajectory seeds the incumbent. If the time limit
    hits before anything better is found the schedule is that trajectory
    with ``fallback`` set. Equal-objective schedules are ranked by fewer
    tap operations, then smaller total |tau|, then lexicographic order.
    """
    hold = m.tau_vector(np.repeat(m.tau0[:, None], m.T, axis=1))
    try:
        res = branch_and_bound(
            m.c, m.A, m.b, m.lb, m.ub, m.integer,
            complete=m.complete, heuristic=_round_heuristic(m), seed=hold,
            tie_key=_tie_key(m), time_limit=time_limit, max_nodes=max_nodes, branching=branching,
        )
    except InfeasibleProblem as exc:
        raise RuntimeError(f"tap MILP infeasible: {exc}") from exc
    taps = m.tau_matrix(res.x)
    assert m.feasible_taps(taps), "schedule violates tap limits or ramp constraint"
    obj, j1, j2 = m.objective_parts(taps)
    return TapSchedule(
        taps=taps, objective=obj, j1=j1, j2=j2, status=res.status, nodes=res.nodes,
        lp_solves=res.lp_solves, wall_time=res.wall_time, gap=res.gap, root_bound=res.root_bound,
        fallback=res.status != "optimal" and res.seeded, oltc_ids=tuple(m.oltc_ids),
    )


# ------------------------------------------------------------ planning


@dataclass
class PlanResult:
    command: dict
    invoked: bool
    schedule: TapSchedule | None = None
    horizon: HorizonData | None = None
    sensitivity: SensitivityModel | None = None
    verified: VoltageSolution | None = None
    solve_time: float = 0.0
    repeats: int = 0


def violates(vmag, band=ANSI_BAND, mask=None) -> np.ndarray:
    vmag = np.asarray(vmag)
    bad = (vmag < band[0]) | (vmag > band[1])
    if mask is not None:
        bad &= mask
    return bad


def plan_step(mode: str, solver: FeederSolver, taps: Mapping[str, int], forecasts: Sequence[InjectionSet],
              measured: VoltageSolution | None = None, *, w1=DEFAULT_W1, w2=DEFAULT_W2, candidate_k=5,
              time_limit=None, band=ANSI_BAND, max_repeats=3) -> PlanResult:
    """Decide the taps to apply now.

    ``mode="full"`` linearizes at every forecast step (taps frozen at their
    current positions), solves over the whole horizon and applies the first
    step. ``mode="simplified"`` uses only the current step with ``w2 = 0``
    and acts only when a measured node lies outside ``band``.

    ``measured`` is the power flow at the current taps and ``forecasts[0]``.
    After solving, the applied taps are checked with one power flow; if a
    node outside the candidate set violates the band while no candidate
    does, the node joins the candidate sets and the problem is re-solved
    (at most ``max_repeats`` times).
    """
    model = solver.model
    taps = {**model.zero_taps(), **taps}
    if mode not in ("full", "simplified"):
        raise ValueError(f"unknown planning mode {mode!r}")
    if not forecasts:
        raise ValueError("no forecast steps")
    if measured is None:
        measured = solver.solve(taps, forecasts[0])
    free = ~model.slack_mask
    if mode == "simplified":
        forecasts = forecasts[:1]
        w2 = 0.0
        if not violates(measured.vmag, band, free).any():
            return PlanResult(command=dict(taps), invoked=False)

    points = [measured]
    for inj in forecasts[1:]:
        sol = solver.solve(taps, inj, v_init=points[-1].v)
        points.append(sol if sol.converged else points[-1])
    lin = [build_sensitivity(solver, taps, p) for p in points]
    terminals = oltc_terminal_nodes(model)
    cands = list(select_candidate_nodes(np.array([p.vmag for p in points]), terminals, candidate_k))
    horizon = HorizonData.from_sensitivities(model, lin, cands, taps)

    t0 = time.perf_counter()
    repeats = 0
    while True:
        sched = solve_milp(build_milp(horizon, w1, w2), time_limit=time_limit)
        command = sched.first_step()
        verified = solver.solve(command, forecasts[0], v_init=measured.v)
        bad = violates(verified.vmag, band, free)
        c0 = horizon.candidates[0]
        missing = np.setdiff1d(np.flatnonzero(bad), c0)
        if repeats >= max_repeats or missing.size == 0 or bad[c0].any():
            break
        horizon = horizon.with_candidates([np.union1d(c, missing) for c in horizon.candidates])
        repeats += 1
    return PlanResult(command=command, invoked=True, schedule=sched, horizon=horizon, sensitivity=lin[0],
                      verified=verified, solve_time=time.perf_counter() - t0, repeats=repeats)
