"""Linearized effect of tap ratio on node voltages.

Around an operating point (V0, I0, a0) with injected currents held fixed,
a ratio change a - a0 perturbs Y by a matrix that is made affine in ``a``
by expanding a^2 to first order, so

    dV = -Y0^{-1} dY V0 = sum_p (a_p - a0_p) s_p

and magnitudes follow |v| ~ |v0| + Re(conj(v0) dv) / |v0|.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .feeder import FeederModel, OltcDevice, TapRangeError
from .powerflow import Factorization, FeederSolver, VoltageSolution


def _check_ratio(device: OltcDevice, a):
    if not device.a_min - 1e-12 <= a <= device.a_max + 1e-12:
        raise TapRangeError(f"oltc {device.id}: ratio {a} outside [{device.a_min}, {device.a_max}]")


def _stamp(device: OltcDevice, d_ii, d_ij, n):
    rows, cols, vals = [], [], []
    for i, j in zip(device.primary_nodes, device.secondary_nodes):
        rows += [i, i, j]
        cols += [i, j, i]
        vals += [d_ii, d_ij, d_ij]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n), dtype=complex)


def delta_y_linear(device: OltcDevice, a0: float, a: float, n: int) -> sp.csr_matrix:
    """Linearized admittance change for a ratio move a0 -> a.

    dY_ii = 2 a0 (a - a0) / z_T, dY_ij = dY_ji = -(a - a0) / z_T, dY_jj = 0.
    """
    _check_ratio(device, a0)
    _check_ratio(device, a)
    y = 1.0 / device.z_t
    return _stamp(device, (2 * a * a0 - 2 * a0 * a0) * y, -(a - a0) * y, n)


def delta_y_exact(device: OltcDevice, a0: float, a: float, n: int) -> sp.csr_matrix:
    """Exact admittance change, dY_ii = (a^2 - a0^2) / z_T."""
    y = 1.0 / device.z_t
    return _stamp(device, (a * a - a0 * a0) * y, -(a - a0) * y, n)


def tap_gradient(device: OltcDevice, a0: float, n: int) -> sp.csr_matrix:
    """d(dY)/da at a0: 2 a0 / z_T on (i, i) and -1 / z_T on (i, j), (j, i)."""
    y = 1.0 / device.z_t
    return _stamp(device, 2 * a0 * y, -y, n)


def _zero_rows(vec, slack_nodes):
    vec = np.array(vec, dtype=complex)
    if slack_nodes is not None:
        vec[slack_nodes] = 0
    return vec


def sensitivity_vector(fact: Factorization, device: OltcDevice, v0, a0: float | None = None,
                       slack_nodes=None) -> np.ndarray:
    """Voltage change per unit tap-ratio change, s_p = -Y0^{-1} G_p V0.

    ``fact`` factorizes the slack-pinned Y0; slack rows of the right-hand
    side are zeroed so the slack voltage stays fixed.
    """
    a0 = device.ratio(0) if a0 is None else a0
    v0 = np.asarray(v0, dtype=complex)
    G = tap_gradient(device, a0, v0.size)
    return fact.solve(_zero_rows(-(G @ v0), slack_nodes))


def delta_v_from_admittance(fact: Factorization, dY, v0, slack_nodes=None) -> np.ndarray:
    """dV = -Y0^{-1} dY V0."""
    return fact.solve(_zero_rows(-(dY @ np.asarray(v0, dtype=complex)), slack_nodes))


def delta_z(fact: Factorization, dY, slack_nodes=None) -> np.ndarray:
    """Dense dZ = -Y0^{-1} dY Y0^{-1} (small networks only)."""
    n = fact.n
    Z0 = np.column_stack([fact.solve(e) for e in np.eye(n, dtype=complex)])
    dYp = sp.lil_matrix(dY, dtype=complex)
    if slack_nodes is not None:
        for s in slack_nodes:
            dYp.rows[s] = []
            dYp.data[s] = []
    return -Z0 @ (dYp.tocsr() @ Z0)


def linear_voltage_magnitude(v0, dv):
    """|v0| + (v_d0 dv_d + v_q0 dv_q) / |v0|, elementwise."""
    v0 = np.asarray(v0, dtype=complex)
    dv = np.asarray(dv, dtype=complex)
    mag = np.abs(v0)
    if np.any(mag == 0):
        raise ZeroDivisionError("linearization point has a zero-magnitude voltage")
    out = mag + (v0.real * dv.real + v0.imag * dv.imag) / mag
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SensitivityModel:
    """Linearization point and one sensitivity vector per OLTC.

    ``sens[p]`` is dV per unit ratio change of ``oltc_ids[p]``; ``gains[p]``
    is the matching d|v|/da row.
    """

    v0: np.ndarray
    i0: np.ndarray
    taps0: Mapping[str, int]
    a0: np.ndarray
    oltc_ids: tuple
    sens: np.ndarray

    @property
    def vmag0(self) -> np.ndarray:
        return np.abs(self.v0)

    @property
    def gains(self) -> np.ndarray:
        return (self.v0.real * self.sens.real + self.v0.imag * self.sens.imag) / np.abs(self.v0)

    def delta_v(self, delta_a) -> np.ndarray:
        return np.asarray(delta_a, dtype=float) @ self.sens

    def predict_vmag(self, ratios) -> np.ndarray:
        """Linearized |V| at the given tap ratios (array ordered like ``oltc_ids``)."""
        return linear_voltage_magnitude(self.v0, self.delta_v(np.asarray(ratios) - self.a0))

    def predict_vmag_taps(self, model: FeederModel, taps: Mapping[str, int]) -> np.ndarray:
        ratios = [model.oltc_lookup[i].ratio(taps.get(i, self.taps0[i])) for i in self.oltc_ids]
        return self.predict_vmag(ratios)


def build_sensitivity(solver: FeederSolver, taps: Mapping[str, int], base: VoltageSolution) -> SensitivityModel:
    """One sparse solve per OLTC at the converged point ``base``."""
    model = solver.model
    fact = solver.factorization(taps)
    ids = tuple(model.oltc_ids)
    a0 = np.array([model.oltc_lookup[i].ratio(taps.get(i, 0)) for i in ids])
    sens = np.array([
        sensitivity_vector(fact, model.oltc_lookup[i], base.v, a0[k], model.slack_nodes)
        for k, i in enumerate(ids)
    ]).reshape(len(ids), model.n_nodes)
    return SensitivityModel(base.v, base.i, {i: int(taps.get(i, 0)) for i in ids}, a0, ids, sens)


class ErrorStats:
    """Signed errors linearized |V| minus oracle |V| for perturbed steps."""

    def __init__(self, steps=(), nodes=(), errors=(), comparisons=0, skipped=0):
        self._chunks = []
        if len(errors):
            self._chunks.append((np.asarray(steps, dtype=int), np.asarray(nodes, dtype=int),
                                 np.asarray(errors, dtype=float)))
        self.comparisons = comparisons
        self.skipped = skipped
        self._cat = None

    def extend(self, step, nodes, errors):
        nodes = np.asarray(nodes, dtype=int)
        self._chunks.append((np.full(nodes.size, step, dtype=int), nodes, np.asarray(errors, dtype=float)))
        self.comparisons += 1
        self._cat = None

    def _arrays(self):
        if self._cat is None:
            if self._chunks:
                self._cat = tuple(np.concatenate(c) for c in zip(*self._chunks))
            else:
                self._cat = (np.zeros(0, dtype=int), np.zeros(0, dtype=int), np.zeros(0))
        return self._cat

    @property
    def steps(self) -> np.ndarray:
        return self._arrays()[0]

    @property
    def nodes(self) -> np.ndarray:
        return self._arrays()[1]

    @property
    def errors(self) -> np.ndarray:
        return self._arrays()[2]

    def merge(self, other: "ErrorStats") -> "ErrorStats":
        out = ErrorStats(comparisons=self.comparisons + other.comparisons, skipped=self.skipped + other.skipped)
        out._chunks = self._chunks + other._chunks
        return out

    @property
    def empty(self) -> bool:
        return self.errors.size == 0

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.errors))) if self.errors.size else 0.0

    @property
    def mean_abs(self) -> float:
        return float(np.mean(np.abs(self.errors))) if self.errors.size else 0.0

    def histogram(self, bins=50):
        if self.empty:
            return np.zeros(0, dtype=int), np.zeros(0)
        return np.histogram(self.errors, bins=bins)

    def to_csv(self, path, node_names: Sequence[str] | None = None):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "node", "E"])
            for s, n, e in zip(self.steps, self.nodes, self.errors):
                w.writerow([int(s), node_names[n] if node_names else int(n), repr(float(e))])

    def summary(self) -> dict:
        return {"comparisons": self.comparisons, "samples": int(self.errors.size),
                "max_abs": self.max_abs, "mean_abs": self.mean_abs, "skipped": self.skipped}


def single_step_perturbations(model: FeederModel, taps: Mapping[str, int]) -> list:
    """Every OLTC moved +1 and -1 on its own, skipping moves past a limit."""
    out = []
    for dev in model.oltcs:
        for d in (1, -1):
            t = taps.get(dev.id, 0) + d
            if abs(t) <= dev.tau_max:
                out.append({dev.id: t})
    return out


def validate_linearization(model: FeederModel, steps: Iterable, perturbations=None,
                           solver: FeederSolver | None = None, include_slack=False) -> ErrorStats:
    """Compare the linear voltage model with the nonlinear oracle.

    ``steps`` yields ``(taps, injections)`` pairs. For each step the oracle is
    solved at ``taps`` to form the linearization point, then at every
    perturbed tap setting; E = linear |V| - oracle |V| at every node.
    ``perturbations`` is a list of partial tap dicts, or a callable
    ``taps -> list``; it defaults to single-step moves of each OLTC. Steps
    whose perturbation list is empty contribute nothing. Oracle failures
    are counted in ``skipped``.
    """
    solver = solver or FeederSolver(model)
    if perturbations is None:
        perturbations = lambda taps: single_step_perturbations(model, taps)  # noqa: E731
    keep = np.ones(model.n_nodes, dtype=bool) if include_slack else ~model.slack_mask
    idx = np.flatnonzero(keep)
    stats = ErrorStats()
    v_prev = None
    for step, (taps, inj) in enumerate(steps):
        taps = {**model.zero_taps(), **taps}
        moves = perturbations(taps) if callable(perturbations) else perturbations
        if not moves:
            continue
        base = solver.solve(taps, inj, v_init=v_prev)
        if not base.converged:
            stats.skipped += len(moves)
            continue
        v_prev = base.v
        lin = build_sensitivity(solver, taps, base)
        for move in moves:
            new = {**taps, **move}
            if new == taps:
                continue
            oracle = solver.solve(new, inj, v_init=base.v)
            if not oracle.converged:
                stats.skipped += 1
                continue
            pred = lin.predict_vmag_taps(model, new)
            stats.extend(step, idx, pred[idx] - oracle.vmag[idx])
    return stats
