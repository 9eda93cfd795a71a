"""Feeder network model, text-format parser and tap-dependent nodal admittance.

A node is one phase of one bus. Branches connect node pairs with a series
impedance, shunts tie a node to ground, and an OLTC couples the common
phases of its primary and secondary bus with a single ganged tap.

All impedances are per unit on the feeder power base. Loads and PV ratings
are kept in kW/kvar and converted to per unit by the power-flow layer.
"""
from __future__ import annotations

import dataclasses
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping

import numpy as np
import scipy.sparse as sp

PHASE_SHIFT_DEG = {"a": 0.0, "b": -120.0, "c": 120.0}


class FeederError(Exception):
    """Base class for feeder file problems."""


class FeederParseError(FeederError):
    """Malformed record in a feeder file."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


class FeederValidationError(FeederError):
    """A structural invariant of the network does not hold."""

    def __init__(self, message, kind="invalid", line=None):
        self.kind = kind
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


class TapRangeError(ValueError):
    pass


@dataclass(frozen=True)
class Bus:
    name: str
    base_kv: float
    phases: str


@dataclass(frozen=True)
class Node:
    index: int
    bus: str
    phase: str

    @property
    def name(self) -> str:
        return f"{self.bus}.{self.phase}"


@dataclass(frozen=True)
class Branch:
    from_node: int
    to_node: int
    z: complex


@dataclass(frozen=True)
class Shunt:
    node: int
    z: complex


@dataclass(frozen=True)
class OltcDevice:
    """Ganged on-load tap changer between a primary and a secondary bus.

    ``primary_nodes[k]`` and ``secondary_nodes[k]`` are the node indices of
    the k-th common phase. ``z_t`` is referred to the primary winding.
    """

    id: str
    primary_bus: str
    secondary_bus: str
    z_t: complex
    tau_max: int = 16
    a_max: float = 1.1
    dto_max: int = 1
    primary_nodes: tuple = ()
    secondary_nodes: tuple = ()

    def __post_init__(self):
        if self.tau_max < 1:
            raise FeederValidationError(f"oltc {self.id}: tau_max must be >= 1", "oltc")
        if not self.a_max > 1.0:
            raise FeederValidationError(f"oltc {self.id}: a_max must exceed 1", "oltc")
        if self.dto_max < 1:
            raise FeederValidationError(f"oltc {self.id}: dto_max must be >= 1", "oltc")

    @property
    def a_min(self) -> float:
        return 2.0 - self.a_max

    @property
    def ratio_step(self) -> float:
        """Tap-ratio change per tap position."""
        return (self.a_max - 1.0) / self.tau_max

    def ratio(self, tau) -> float:
        return tap_to_ratio(self, tau)


@dataclass(frozen=True)
class Load:
    node: int
    p_kw: float
    q_kvar: float
    profile: str


@dataclass(frozen=True)
class PvSystem:
    node: int
    rated_kw: float
    profile: str


@dataclass(frozen=True)
class Slack:
    bus: str
    v_pu: float = 1.0
    angle_deg: float = 0.0


@dataclass(frozen=True)
class FeederModel:
    buses: tuple
    nodes: tuple
    branches: tuple
    oltcs: tuple
    loads: tuple
    pvs: tuple
    slack: Slack
    shunts: tuple = ()
    base_mva: float = 1.0
    name: str = "feeder"
    _validated: bool = field(default=False, repr=False, compare=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @cached_property
    def node_lookup(self) -> dict:
        return {n.name: n.index for n in self.nodes}

    @cached_property
    def bus_lookup(self) -> dict:
        return {b.name: b for b in self.buses}

    def node_index(self, name: str) -> int:
        try:
            return self.node_lookup[name]
        except KeyError:
            raise KeyError(f"unknown node {name!r}") from None

    def bus_nodes(self, bus: str) -> list:
        return [n.index for n in self.nodes if n.bus == bus]

    @cached_property
    def slack_nodes(self) -> np.ndarray:
        return np.array(self.bus_nodes(self.slack.bus), dtype=int)

    @cached_property
    def slack_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[self.slack_nodes] = True
        return mask

    @cached_property
    def phase_angles(self) -> np.ndarray:
        """Reference angle (rad) per node: slack angle plus phase shift."""
        return np.deg2rad(
            [self.slack.angle_deg + PHASE_SHIFT_DEG[n.phase] for n in self.nodes]
        )

    @cached_property
    def slack_voltage(self) -> np.ndarray:
        ang = self.phase_angles[self.slack_nodes]
        return self.slack.v_pu * np.exp(1j * ang)

    @cached_property
    def flat_voltage(self) -> np.ndarray:
        return self.slack.v_pu * np.exp(1j * self.phase_angles)

    @cached_property
    def oltc_lookup(self) -> dict:
        return {d.id: d for d in self.oltcs}

    @property
    def oltc_ids(self) -> list:
        return [d.id for d in self.oltcs]

    def zero_taps(self) -> dict:
        return {d.id: 0 for d in self.oltcs}

    def nominal_load_kva(self) -> float:
        """|sum of nominal complex load| in kVA."""
        return abs(sum(complex(ld.p_kw, ld.q_kvar) for ld in self.loads))

    def total_pv_kw(self) -> float:
        return float(sum(pv.rated_kw for pv in self.pvs))

    @cached_property
    def _base_stamps(self):
        rows, cols, vals = [], [], []
        for br in self.branches:
            y = 1.0 / br.z
            i, k = br.from_node, br.to_node
            rows += [i, k, i, k]
            cols += [i, k, k, i]
            vals += [y, y, -y, -y]
        for sh in self.shunts:
            rows.append(sh.node)
            cols.append(sh.node)
            vals.append(1.0 / sh.z)
        return (np.array(rows, dtype=int), np.array(cols, dtype=int),
                np.array(vals, dtype=complex))

    def validate(self) -> "FeederModel":
        """Check structural invariants; raises FeederValidationError."""
        n = self.n_nodes
        if [nd.index for nd in self.nodes] != list(range(n)):
            raise FeederValidationError("node indices must be dense and ordered", "nodes")
        if len(self.node_lookup) != n:
            raise FeederValidationError("duplicate node names", "nodes")
        if self.slack.bus not in self.bus_lookup:
            raise FeederValidationError(f"unknown node: slack bus {self.slack.bus!r}", "unknown node")
        for br in self.branches:
            for idx in (br.from_node, br.to_node):
                if not 0 <= idx < n:
                    raise FeederValidationError(f"unknown node: branch endpoint {idx}", "unknown node")
            if br.from_node == br.to_node:
                raise FeederValidationError(f"branch loops on node {self.nodes[br.from_node].name}", "branch")
            if br.z == 0:
                raise FeederValidationError(
                    f"zero impedance branch {self.nodes[br.from_node].name}-{self.nodes[br.to_node].name}",
                    "impedance")
        for sh in self.shunts:
            if sh.z == 0:
                raise FeederValidationError(f"zero impedance shunt at {self.nodes[sh.node].name}", "impedance")
        for dev in self.oltcs:
            if dev.z_t == 0:
                raise FeederValidationError(f"oltc {dev.id}: zero impedance", "impedance")
            if not dev.primary_nodes or len(dev.primary_nodes) != len(dev.secondary_nodes):
                raise FeederValidationError(f"oltc {dev.id}: no common phases", "oltc")
        if len({d.id for d in self.oltcs}) != len(self.oltcs):
            raise FeederValidationError("duplicate oltc id", "oltc")
        for obj in (*self.loads, *self.pvs):
            if not 0 <= obj.node < n:
                raise FeederValidationError(f"unknown node: {obj.node}", "unknown node")
        self._check_connected()
        object.__setattr__(self, "_validated", True)
        return self

    def _check_connected(self):
        adj = [[] for _ in range(self.n_nodes)]
        for br in self.branches:
            adj[br.from_node].append(br.to_node)
            adj[br.to_node].append(br.from_node)
        for dev in self.oltcs:
            for i, j in zip(dev.primary_nodes, dev.secondary_nodes):
                adj[i].append(j)
                adj[j].append(i)
        seen = np.zeros(self.n_nodes, dtype=bool)
        queue = deque(int(i) for i in self.slack_nodes)
        seen[self.slack_nodes] = True
        while queue:
            i = queue.popleft()
            for k in adj[i]:
                if not seen[k]:
                    seen[k] = True
                    queue.append(k)
        if not seen.all():
            names = [self.nodes[i].name for i in np.flatnonzero(~seen)]
            raise FeederValidationError(
                f"disconnected from slack: {', '.join(names[:5])}" + (" ..." if len(names) > 5 else ""),
                "disconnected")


@dataclass(frozen=True)
class AdmittanceMatrix:
    """Nodal admittance at a given tap setting.

    ``matrix`` is the full (unpinned) CSC matrix. ``tap_entries`` maps each
    OLTC id to its (primary, secondary) node pairs, the only entries that
    depend on that device's tap.
    """

    matrix: sp.csc_matrix
    ratios: Mapping[str, float]
    tap_entries: Mapping[str, tuple]
    slack_nodes: np.ndarray

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def pinned(self) -> sp.csc_matrix:
        """Copy with slack rows replaced by identity rows."""
        Y = self.matrix.tolil(copy=True)
        for s in self.slack_nodes:
            Y.rows[s] = [int(s)]
            Y.data[s] = [1.0 + 0j]
        return Y.tocsc()

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def tap_to_ratio(device: OltcDevice, tau) -> float:
    """Tap ratio for tap position ``tau``: affine, 1 at tau=0, a_max at tau_max."""
    if abs(tau) > device.tau_max:
        raise TapRangeError(f"oltc {device.id}: tap {tau} outside [-{device.tau_max}, {device.tau_max}]")
    return 1.0 + (tau / device.tau_max) * (device.a_max - 1.0)


def build_admittance(model: FeederModel, taps: Mapping[str, int] | None = None) -> AdmittanceMatrix:
    """Assemble Y with each OLTC stamped at the ratio of its tap.

    Per phase pair (i, j): Y_ii += a^2/z_T, Y_ij = Y_ji -= a/z_T,
    Y_jj += 1/z_T. Missing entries in ``taps`` default to 0.
    """
    taps = dict(taps or {})
    unknown = set(taps) - set(model.oltc_lookup)
    if unknown:
        raise KeyError(f"unknown oltc id(s): {sorted(unknown)}")
    rows, cols, vals = model._base_stamps
    r2, c2, v2 = [rows], [cols], [vals]
    ratios, entries = {}, {}
    for dev in model.oltcs:
        a = tap_to_ratio(dev, taps.get(dev.id, 0))
        y = 1.0 / dev.z_t
        ratios[dev.id] = a
        entries[dev.id] = tuple(zip(dev.primary_nodes, dev.secondary_nodes))
        for i, j in entries[dev.id]:
            r2.append(np.array([i, j, i, j]))
            c2.append(np.array([i, j, j, i]))
            v2.append(np.array([a * a * y, y, -a * y, -a * y]))
    n = model.n_nodes
    Y = sp.coo_matrix(
        (np.concatenate(v2), (np.concatenate(r2), np.concatenate(c2))), shape=(n, n)
    ).tocsc()
    Y.sum_duplicates()
    return AdmittanceMatrix(Y, ratios, entries, model.slack_nodes)


def scale_pv_penetration(model: FeederModel, penetration: float, peak_load_kva: float | None = None) -> FeederModel:
    """Rescale every PV rating by one common factor.

    After scaling, total rated PV = penetration/100 * peak load. The peak
    defaults to the nominal total apparent load; simulations pass the peak
    of the load profile instead.
    """
    if penetration < 0:
        raise ValueError("penetration must be non-negative")
    peak = model.nominal_load_kva() if peak_load_kva is None else float(peak_load_kva)
    if peak <= 0:
        raise ValueError("peak feeder load must be positive")
    installed = model.total_pv_kw()
    if penetration == 0:
        return dataclasses.replace(model, pvs=tuple(dataclasses.replace(pv, rated_kw=0.0) for pv in model.pvs))
    if installed <= 0:
        raise ValueError("feeder has no installed PV to scale")
    factor = penetration / 100.0 * peak / installed
    pvs = tuple(dataclasses.replace(pv, rated_kw=pv.rated_kw * factor) for pv in model.pvs)
    return dataclasses.replace(model, pvs=pvs)


# ---------------------------------------------------------------- parsing


def _num(tok, line, what):
    try:
        return float(tok)
    except ValueError:
        raise FeederParseError(f"{what}: expected a number, got {tok!r}", line) from None


def _int(tok, line, what):
    try:
        return int(tok)
    except ValueError:
        raise FeederParseError(f"{what}: expected an integer, got {tok!r}", line) from None


_ARITY = {"bus": 4, "branch": 5, "shunt": 4, "oltc": 9, "load": 5, "pv": 4, "slack": 4, "base": 2, "name": 2}


def parse_feeder_text(text: str, name: str = "feeder") -> FeederModel:
    """Parse the line-oriented feeder format (see README)."""
    buses: dict = {}
    records = []
    slack = None
    base_mva = 1.0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        kind = tok[0].lower()
        if kind not in _ARITY:
            raise FeederParseError(f"unknown record type {tok[0]!r}", lineno)
        if len(tok) != _ARITY[kind]:
            raise FeederParseError(f"{kind}: expected {_ARITY[kind] - 1} fields, got {len(tok) - 1}", lineno)
        if kind == "bus":
            bname, kv, phases = tok[1], _num(tok[2], lineno, "basekV"), tok[3].lower()
            if bname in buses:
                raise FeederParseError(f"duplicate bus {bname!r}", lineno)
            if not phases or any(p not in PHASE_SHIFT_DEG for p in phases) or len(set(phases)) != len(phases):
                raise FeederParseError(f"bad phase list {tok[3]!r}", lineno)
            buses[bname] = Bus(bname, kv, "".join(sorted(phases)))
        elif kind == "slack":
            if slack is not None:
                raise FeederValidationError("more than one slack bus", "slack", lineno)
            slack = (Slack(tok[1], _num(tok[2], lineno, "Vpu"), _num(tok[3], lineno, "angle")), lineno)
        elif kind == "base":
            base_mva = _num(tok[1], lineno, "base MVA")
            if base_mva <= 0:
                raise FeederParseError("base MVA must be positive", lineno)
        elif kind == "name":
            name = tok[1]
        else:
            records.append((lineno, kind, tok))
    if slack is None:
        raise FeederValidationError("no slack bus defined", "slack")

    nodes = []
    for b in buses.values():
        for ph in b.phases:
            nodes.append(Node(len(nodes), b.name, ph))
    lookup = {n.name: n.index for n in nodes}

    def node_of(ref, lineno):
        if "." not in ref:
            raise FeederParseError(f"node reference {ref!r} must be <bus>.<phase>", lineno)
        if ref not in lookup:
            raise FeederValidationError(f"unknown node {ref!r}", "unknown node", lineno)
        return lookup[ref]

    def impedance(r, x, lineno):
        z = complex(_num(r, lineno, "r_pu"), _num(x, lineno, "x_pu"))
        if z == 0:
            raise FeederValidationError("zero impedance", "impedance", lineno)
        return z

    branches, shunts, oltcs, loads, pvs = [], [], [], [], []
    for lineno, kind, tok in records:
        if kind == "branch":
            i, k = node_of(tok[1], lineno), node_of(tok[2], lineno)
            if nodes[i].phase != nodes[k].phase:
                raise FeederValidationError("branch joins different phases", "branch", lineno)
            branches.append(Branch(i, k, impedance(tok[3], tok[4], lineno)))
        elif kind == "shunt":
            shunts.append(Shunt(node_of(tok[1], lineno), impedance(tok[2], tok[3], lineno)))
        elif kind == "oltc":
            pb, sb = tok[2], tok[3]
            for b in (pb, sb):
                if b not in buses:
                    raise FeederValidationError(f"unknown node: bus {b!r}", "unknown node", lineno)
            common = [p for p in buses[pb].phases if p in buses[sb].phases]
            if not common:
                raise FeederValidationError(f"oltc {tok[1]}: no common phases", "oltc", lineno)
            try:
                dev = OltcDevice(
                    tok[1], pb, sb, impedance(tok[4], tok[5], lineno),
                    tau_max=_int(tok[6], lineno, "tau_max"),
                    a_max=_num(tok[7], lineno, "a_max"),
                    dto_max=_int(tok[8], lineno, "dto_max"),
                    primary_nodes=tuple(lookup[f"{pb}.{p}"] for p in common),
                    secondary_nodes=tuple(lookup[f"{sb}.{p}"] for p in common),
                )
            except FeederValidationError as exc:
                raise FeederValidationError(str(exc), exc.kind, lineno) from None
            oltcs.append(dev)
        elif kind == "load":
            loads.append(Load(node_of(tok[1], lineno), _num(tok[2], lineno, "kW"),
                              _num(tok[3], lineno, "kvar"), tok[4]))
        elif kind == "pv":
            kw = _num(tok[2], lineno, "kW rated")
            if kw < 0:
                raise FeederParseError("negative PV rating", lineno)
            pvs.append(PvSystem(node_of(tok[1], lineno), kw, tok[3]))

    sl, sl_line = slack
    if sl.bus not in buses:
        raise FeederValidationError(f"unknown node: slack bus {sl.bus!r}", "unknown node", sl_line)
    model = FeederModel(
        buses=tuple(buses.values()), nodes=tuple(nodes), branches=tuple(branches),
        oltcs=tuple(oltcs), loads=tuple(loads), pvs=tuple(pvs), slack=sl,
        shunts=tuple(shunts), base_mva=base_mva, name=name,
    )
    return model.validate()


def parse_feeder(path) -> FeederModel:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise FeederParseError(f"feeder file not found: {path}", path=path) from None
    return parse_feeder_text(text, name=path.stem)


def format_feeder(model: FeederModel) -> str:
    """Serialize a model back to the text format."""
    out = [f"name {model.name}", f"base {model.base_mva!r}"]
    for b in model.buses:
        out.append(f"bus {b.name} {b.base_kv!r} {b.phases}")
    out.append(f"slack {model.slack.bus} {model.slack.v_pu!r} {model.slack.angle_deg!r}")
    nm = [n.name for n in model.nodes]
    for br in model.branches:
        out.append(f"branch {nm[br.from_node]} {nm[br.to_node]} {br.z.real!r} {br.z.imag!r}")
    for sh in model.shunts:
        out.append(f"shunt {nm[sh.node]} {sh.z.real!r} {sh.z.imag!r}")
    for d in model.oltcs:
        out.append(f"oltc {d.id} {d.primary_bus} {d.secondary_bus} {d.z_t.real!r} {d.z_t.imag!r} "
                   f"{d.tau_max} {d.a_max!r} {d.dto_max}")
    for ld in model.loads:
        out.append(f"load {nm[ld.node]} {ld.p_kw!r} {ld.q_kvar!r} {ld.profile}")
    for pv in model.pvs:
        out.append(f"pv {nm[pv.node]} {pv.rated_kw!r} {pv.profile}")
    return "\n".join(out) + "\n"
