"""Nonlinear AC power flow by fixed-point current injection.

The slack rows of Y are replaced by identity rows, so a single sparse LU of
the pinned matrix serves both the power flow and the tap sensitivities.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Mapping

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .feeder import AdmittanceMatrix, FeederModel, build_admittance

TOL_PF = 1e-8
MAX_ITER = 100


class SingularMatrixError(RuntimeError):
    pass


class PowerFlowError(RuntimeError):
    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class Factorization:
    """Sparse LU handle; ``solve`` accepts complex right-hand sides."""

    def __init__(self, matrix):
        A = sp.csc_matrix(matrix, dtype=complex)
        if A.shape[0] != A.shape[1]:
            raise ValueError("matrix must be square")
        try:
            self._lu = spla.splu(A)
        except RuntimeError as exc:
            raise SingularMatrixError(str(exc)) from None
        self.n = A.shape[0]

    def solve(self, b):
        b = np.asarray(b, dtype=complex)
        x = self._lu.solve(b)
        if not np.all(np.isfinite(x)):
            raise SingularMatrixError("non-finite solution")
        return x


def factorize(Y) -> Factorization:
    """LU-factorize an admittance matrix.

    An :class:`AdmittanceMatrix` is pinned at its slack rows first; a plain
    sparse or dense matrix is factorized as given.
    """
    if isinstance(Y, AdmittanceMatrix):
        return Factorization(Y.pinned())
    return Factorization(Y)


@dataclass(frozen=True)
class InjectionSet:
    """Per-node demand ``s_load`` (complex) and PV output ``p_pv`` in p.u."""

    s_load: np.ndarray
    p_pv: np.ndarray

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n, dtype=complex), np.zeros(n))

    @property
    def net(self) -> np.ndarray:
        return self.p_pv - self.s_load


@dataclass(frozen=True)
class VoltageSolution:
    v: np.ndarray
    i: np.ndarray
    converged: bool
    iterations: int
    mismatch: float

    @property
    def vmag(self) -> np.ndarray:
        return np.abs(self.v)


def nominal_injections(model: FeederModel, load_scale=1.0, pv_scale=0.0) -> InjectionSet:
    """Injections with every load at ``load_scale`` x nominal and every PV at ``pv_scale`` x rating."""
    n = model.n_nodes
    s = np.zeros(n, dtype=complex)
    p = np.zeros(n)
    for ld in model.loads:
        s[ld.node] += complex(ld.p_kw, ld.q_kvar) * load_scale
    for pv in model.pvs:
        p[pv.node] += pv.rated_kw * pv_scale
    kva_base = model.base_mva * 1000.0
    return InjectionSet(s / kva_base, p / kva_base)


def node_currents(v, inj: InjectionSet, admittance: AdmittanceMatrix | None = None) -> np.ndarray:
    """Injected currents conj(S_net / V); slack entries from Y V when Y is given."""
    v = np.asarray(v, dtype=complex)
    net = inj.net
    bad = (v == 0) & (net != 0)
    if bad.any():
        raise ZeroDivisionError(f"zero voltage at node(s) {np.flatnonzero(bad).tolist()} with nonzero power")
    with np.errstate(divide="ignore", invalid="ignore"):
        cur = np.where(net != 0, np.conj(net / np.where(v == 0, 1, v)), 0)
    if admittance is not None:
        s = admittance.slack_nodes
        cur[s] = (admittance.matrix @ v)[s]
    return cur


class FeederSolver:
    """Power-flow engine for one feeder with an LRU cache of factorizations by tap setting."""

    def __init__(self, model: FeederModel, tol=TOL_PF, max_iter=MAX_ITER, cache_size=64):
        self.model = model
        self.tol = tol
        self.max_iter = max_iter
        self._cache: OrderedDict = OrderedDict()
        self._cache_size = cache_size
        self._slack = model.slack_nodes
        self._slack_v = model.slack_voltage
        self._free = ~model.slack_mask

    def _key(self, taps):
        taps = taps or {}
        return tuple(int(taps.get(i, 0)) for i in self.model.oltc_ids)

    def admittance_and_factor(self, taps):
        key = self._key(taps)
        hit = self._cache.get(key)
        if hit is None:
            Y = build_admittance(self.model, dict(zip(self.model.oltc_ids, key)))
            hit = (Y, factorize(Y))
            self._cache[key] = hit
            if len(self._cache) > self._cache_size:
                self._cache.popitem(last=False)
        else:
            self._cache.move_to_end(key)
        return hit

    def admittance(self, taps) -> AdmittanceMatrix:
        return self.admittance_and_factor(taps)[0]

    def factorization(self, taps) -> Factorization:
        return self.admittance_and_factor(taps)[1]

    def solve(self, taps, inj: InjectionSet, v_init=None, check=False) -> VoltageSolution:
        Y, lu = self.admittance_and_factor(taps)
        Ym = Y.matrix
        net = inj.net
        free = self._free
        v = (self.model.flat_voltage if v_init is None else np.asarray(v_init, dtype=complex)).copy()
        v[self._slack] = self._slack_v
        rhs = np.empty_like(v)
        mismatch = np.inf
        k = 0
        while True:
            i_calc = Ym @ v
            mis = v * np.conj(i_calc) - net
            mismatch = float(np.max(np.abs(mis[free]), initial=0.0))
            if mismatch < self.tol or k >= self.max_iter or not np.isfinite(mismatch):
                break
            with np.errstate(divide="ignore", invalid="ignore"):
                rhs[:] = np.conj(net / v)
            rhs[self._slack] = self._slack_v
            if not np.all(np.isfinite(rhs)):
                break
            v = lu.solve(rhs)
            v[self._slack] = self._slack_v
            k += 1
        converged = mismatch < self.tol
        sol = VoltageSolution(v, Ym @ v, bool(converged), k, mismatch)
        if check and not converged:
            raise PowerFlowError(f"power flow did not converge (mismatch {mismatch:.3e} p.u.)", sol)
        return sol


def solve_power_flow(model: FeederModel, taps: Mapping[str, int] | None, inj: InjectionSet,
                     v_init=None, tol=TOL_PF, max_iter=MAX_ITER, check=True) -> VoltageSolution:
    """One-off power flow; raises PowerFlowError on divergence when ``check``."""
    return FeederSolver(model, tol=tol, max_iter=max_iter).solve(taps, inj, v_init=v_init, check=check)
