"""Dense simplex for box-bounded LPs with few columns and many rows.

Solves ``min c @ x  s.t.  A @ x <= b,  lb <= x <= ub`` by running the
primal simplex method on the dual program

    min h @ lam   s.t.  G.T @ lam = -c,  lam >= 0,

where ``G`` stacks ``A``, ``-I`` (lower bounds) and ``I`` (upper bounds).
The basis has one entry per column of ``A``, so the work per pivot scales
with the number of variables rather than the number of rows. Bounds only
enter through ``h``, which means any optimal basis stays feasible for the
dual after a bound change and can warm-start a branch-and-bound child.

The starting basis puts every variable on the bound its cost points to
(lower for ``c_j >= 0``, upper otherwise); that bound must be finite.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FEAS_TOL = 1e-9
PIVOT_TOL = 1e-9
REFACTOR_EVERY = 64
DEGENERATE_SWITCH = 50


@dataclass
class LPResult:
    x: np.ndarray | None
    fun: float
    status: str          # "optimal" | "infeasible" | "iteration_limit"
    basis: tuple | None
    nit: int

    @property
    def success(self) -> bool:
        return self.status == "optimal"


class BoundedLP:
    """LP with fixed ``c``, ``A``, ``b``; bounds are supplied per solve."""

    def __init__(self, c, A, b):
        self.c = np.asarray(c, dtype=float)
        A = np.atleast_2d(np.asarray(A, dtype=float))
        self.n = self.c.size
        if A.size == 0:
            A = np.zeros((0, self.n))
        if A.shape[1] != self.n:
            raise ValueError("A and c have inconsistent dimensions")
        self.m = A.shape[0]
        self.b = np.asarray(b, dtype=float).reshape(self.m)
        eye = np.eye(self.n)
        self.G = np.vstack([A, -eye, eye])
        self.neg_c = -self.c

    def _h(self, lb, ub):
        return np.concatenate([self.b, -np.asarray(lb, dtype=float), np.asarray(ub, dtype=float)])

    def start_basis(self, lb, ub):
        basis = []
        for j in range(self.n):
            if self.c[j] >= 0:
                if not np.isfinite(lb[j]):
                    raise ValueError(f"variable {j}: cost >= 0 needs a finite lower bound")
                basis.append(self.m + j)
            else:
                if not np.isfinite(ub[j]):
                    raise ValueError(f"variable {j}: negative cost needs a finite upper bound")
                basis.append(self.m + self.n + j)
        return basis

    def solve(self, lb, ub, basis=None, max_iter=None) -> LPResult:
        lb = np.asarray(lb, dtype=float)
        ub = np.asarray(ub, dtype=float)
        if np.any(lb > ub + FEAS_TOL):
            return LPResult(None, np.inf, "infeasible", None, 0)
        h = self._h(lb, ub)
        G, n = self.G, self.n
        B = None
        if basis is not None:
            B = list(basis)
            try:
                Binv = np.linalg.inv(G[B].T)
                lam = Binv @ self.neg_c
                if np.any(lam < -1e-7) or not np.all(np.isfinite(h[B])):
                    B = None
            except np.linalg.LinAlgError:
                B = None
        if B is None:
            B = self.start_basis(lb, ub)
            Binv = np.linalg.inv(G[B].T)
            lam = Binv @ self.neg_c
        lam = np.maximum(lam, 0.0)
        max_iter = max_iter or 50 * (self.m + 2 * n) + 1000
        degenerate = 0
        since_refactor = 0
        nit = 0
        while True:
            x = Binv.T @ h[B]
            with np.errstate(invalid="ignore"):
                slack = h - G @ x
            bland = degenerate >= DEGENERATE_SWITCH
            if bland:
                viol = np.flatnonzero(slack < -FEAS_TOL)
                if viol.size == 0:
                    break
                j = int(viol[0])
            else:
                j = int(np.argmin(slack))
                if not slack[j] < -FEAS_TOL:
                    break
            if nit >= max_iter:
                return LPResult(x, float(self.c @ x), "iteration_limit", tuple(B), nit)
            w = Binv @ G[j]
            pos = np.flatnonzero(w > PIVOT_TOL)
            if pos.size == 0:
                return LPResult(None, np.inf, "infeasible", tuple(B), nit)
            ratios = lam[pos] / w[pos]
            rmin = ratios.min()
            ties = pos[ratios <= rmin + 1e-12]
            if bland:
                r = int(min(ties, key=lambda i: B[i]))
            else:
                r = int(ties[np.argmax(w[ties])])
            theta = lam[r] / w[r]
            degenerate = degenerate + 1 if theta <= 1e-14 else 0
            lam -= theta * w
            lam[r] = theta
            np.maximum(lam, 0.0, out=lam)
            row = Binv[r] / w[r]
            Binv -= np.outer(w, row)
            Binv[r] = row
            B[r] = j
            nit += 1
            since_refactor += 1
            if since_refactor >= REFACTOR_EVERY:
                Binv = np.linalg.inv(G[B].T)
                lam = np.maximum(Binv @ self.neg_c, 0.0)
                since_refactor = 0
        return LPResult(x, float(self.c @ x), "optimal", tuple(B), nit)


def solve_lp(c, A, b, lb, ub) -> LPResult:
    """Convenience wrapper for a single cold-start solve."""
    return BoundedLP(c, A, b).solve(lb, ub)
