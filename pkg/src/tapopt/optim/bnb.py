"""Depth-first branch and bound over the bounded simplex."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .simplex import BoundedLP

INT_TOL = 1e-6
OBJ_TOL = 1e-9
RELIABLE = 1
LOOKAHEAD = 4
SCORE_EPS = 1e-6


class InfeasibleProblem(RuntimeError):
    pass


@dataclass
class MipResult:
    x: np.ndarray | None
    fun: float
    status: str            # "optimal" | "time_limit" | "node_limit"
    root_bound: float
    best_bound: float
    nodes: int
    lp_solves: int
    lp_iterations: int
    wall_time: float
    seeded: bool           # incumbent is still the caller-supplied seed

    @property
    def gap(self) -> float:
        if self.x is None:
            return math.inf
        return max(0.0, self.fun - self.best_bound)


@dataclass
class _Node:
    lb: np.ndarray
    ub: np.ndarray
    x: np.ndarray
    fun: float
    basis: tuple
    depth: int


def branch_and_bound(c, A, b, lb, ub, integer, *, complete=None, heuristic=None, seed=None,
                     tie_key=None, time_limit=None, max_nodes=None, branching="reliability") -> MipResult:
    """Minimize ``c @ x`` over ``A x <= b``, bounds, and integrality of ``x[integer]``.

    Parameters
    ----------
    complete : callable, optional
        ``complete(z) -> x or None`` fills the continuous variables for an
        integer assignment ``z`` (values of ``x[integer]``), or returns None
        if ``z`` is infeasible. Needed for ``seed`` and ``heuristic``.
    heuristic : callable, optional
        ``heuristic(x_lp) -> iterable of z`` proposes integer assignments
        from a fractional relaxation.
    seed : array, optional
        Integer assignment used as the first incumbent.
    tie_key : callable, optional
        ``tie_key(x)`` orders incumbents whose objectives agree within
        ``OBJ_TOL``; the smaller key wins.
    branching : {"reliability", "fractional"}
        Branching rule; see below.

    Nodes are explored depth first. The branching variable is chosen by
    reliability branching: a fractional variable whose pseudo-costs rest on
    fewer than ``RELIABLE`` observations per direction is scored by solving
    both children (warm, from the parent basis); the others are scored from
    pseudo-costs. Scores use the product rule and ties go to the more
    fractional, then lower-index variable. The child with the better bound
    is explored first, the down branch on equal bounds. ``"fractional"``
    branches on the most fractional variable instead; it is much slower
    when many variables do not affect the bound (e.g. zero switching cost).
    """
    if branching not in ("reliability", "fractional"):
        raise ValueError(f"unknown branching rule {branching!r}")
    t0 = time.perf_counter()
    c = np.asarray(c, dtype=float)
    lb = np.asarray(lb, dtype=float).copy()
    ub = np.asarray(ub, dtype=float).copy()
    int_idx = np.flatnonzero(np.asarray(integer, dtype=bool))
    lb[int_idx] = np.ceil(lb[int_idx] - INT_TOL)
    ub[int_idx] = np.floor(ub[int_idx] + INT_TOL)
    lp = BoundedLP(c, A, b)

    best_x, best_f = None, math.inf
    seeded = False
    stats = {"lp": 0, "it": 0}

    def offer(x):
        nonlocal best_x, best_f, seeded
        if x is None:
            return False
        f = float(c @ x)
        if f < best_f - OBJ_TOL or (
            best_x is not None and abs(f - best_f) <= OBJ_TOL and tie_key is not None
            and tie_key(x) < tie_key(best_x)
        ):
            best_x, best_f = x, f
            seeded = False
            return True
        return False

    def run_lp(lo, hi, basis):
        res = lp.solve(lo, hi, basis)
        stats["lp"] += 1
        stats["it"] += res.nit
        return res

    n_int = int_idx.size
    pc_sum = np.zeros((2, n_int))        # per-unit bound gains, down/up
    pc_cnt = np.zeros((2, n_int), dtype=int)
    pos_of = {int(j): k for k, j in enumerate(int_idx)}

    def child(node, j, side):
        lo, hi = node.lb.copy(), node.ub.copy()
        v = node.x[j]
        if side == "down":
            hi[j] = math.floor(v)
        else:
            lo[j] = math.ceil(v)
        if lo[j] > hi[j]:
            return None, None
        return lo, hi

    def gain(node, res):
        return math.inf if not res.success else max(0.0, res.fun - node.fun)

    def record(j, side, node, res):
        if not res.success:
            return
        s_ = 0 if side == "down" else 1
        f = node.x[j] - math.floor(node.x[j])
        frac = f if side == "down" else 1.0 - f
        k = pos_of[j]
        pc_sum[s_, k] += gain(node, res) / max(frac, INT_TOL)
        pc_cnt[s_, k] += 1

    def pseudo(j, side, node):
        s_ = 0 if side == "down" else 1
        k = pos_of[j]
        f = node.x[j] - math.floor(node.x[j])
        frac = f if side == "down" else 1.0 - f
        cnt = pc_cnt[s_, k]
        if cnt:
            return pc_sum[s_, k] / cnt * frac
        seen = pc_cnt[s_] > 0
        avg = pc_sum[s_, seen].sum() / pc_cnt[s_, seen].sum() if seen.any() else 1.0
        return avg * frac

    def select_branch(node, z, dist):
        frac = np.flatnonzero(dist > INT_TOL)
        order = frac[np.lexsort((frac, -dist[frac]))]
        if branching == "fractional":
            return int(int_idx[order[0]]), {}
        best_j, best_score, best_kids = None, -1.0, {}
        stale = 0
        for k in order:
            j = int(int_idx[k])
            reliable = min(pc_cnt[0, k], pc_cnt[1, k]) >= RELIABLE
            kids = {}
            if reliable:
                gains = [pseudo(j, side, node) for side in ("down", "up")]
            else:
                gains = []
                for side in ("down", "up"):
                    lo, hi = child(node, j, side)
                    if lo is None:
                        gains.append(math.inf)
                        kids[side] = (None, None, None)
                        continue
                    res = run_lp(lo, hi, node.basis)
                    record(j, side, node, res)
                    kids[side] = (lo, hi, res)
                    g = gain(node, res)
                    if res.success and res.fun >= best_f - OBJ_TOL:
                        g = math.inf
                    gains.append(g)
            score = max(min(gains[0], 1e12), SCORE_EPS) * max(min(gains[1], 1e12), SCORE_EPS)
            if score > best_score:
                best_j, best_score, best_kids = j, score, kids
                stale = 0
            elif not reliable:
                stale += 1
                if stale >= LOOKAHEAD:
                    break
        return best_j, best_kids

    if seed is not None and complete is not None:
        if offer(complete(np.asarray(seed, dtype=float))):
            seeded = True

    root = run_lp(lb, ub, None)
    if not root.success:
        raise InfeasibleProblem(f"relaxation {root.status}")
    stack = [_Node(lb, ub, root.x, root.fun, root.basis, 0)]
    nodes = 0
    status = "optimal"
    while stack:
        if time_limit is not None and time.perf_counter() - t0 > time_limit:
            status = "time_limit"
            break
        if max_nodes is not None and nodes >= max_nodes:
            status = "node_limit"
            break
        node = stack.pop()
        if node.fun >= best_f - OBJ_TOL:
            continue
        nodes += 1
        z = node.x[int_idx]
        dist = np.abs(z - np.round(z))
        k = int(np.argmax(dist))
        if dist[k] <= INT_TOL:
            x = node.x.copy()
            x[int_idx] = np.round(z)
            if complete is not None:
                filled = complete(x[int_idx])
                if filled is not None:
                    x = filled
            offer(x)
            continue
        if heuristic is not None and complete is not None:
            for cand in heuristic(node.x):
                offer(complete(np.asarray(cand, dtype=float)))
        if node.fun >= best_f - OBJ_TOL:
            continue
        j, kids = select_branch(node, z, dist)
        children = []
        for side in ("down", "up"):
            lo, hi, res = kids[side] if side in kids else child(node, j, side) + (None,)
            if lo is None:
                continue
            if res is None:
                res = run_lp(lo, hi, node.basis)
                record(j, side, node, res)
            if res.success and res.fun < best_f - OBJ_TOL:
                children.append(_Node(lo, hi, res.x, res.fun, res.basis, node.depth + 1))
        # better bound on top of the stack; down child wins ties
        children.sort(key=lambda nd: (nd.fun, 0 if nd.ub[j] < node.ub[j] else 1), reverse=True)
        stack.extend(children)

    open_bounds = [nd.fun for nd in stack if nd.fun < best_f - OBJ_TOL]
    best_bound = min([best_f, *open_bounds]) if status != "optimal" else best_f
    if best_x is not None:
        assert root.fun <= best_f + 1e-7, "relaxation bound exceeds integer objective"
    return MipResult(best_x, best_f, status, root.fun, best_bound, nodes, stats["lp"], stats["it"],
                     time.perf_counter() - t0, seeded)
