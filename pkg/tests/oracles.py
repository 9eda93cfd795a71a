"""Independent reference computations used by the tests.

Nothing here imports the solver internals it checks: admittance is stamped
densely from the raw records, the two-bus case is solved in closed form,
and the tap MILP is checked by enumerating every ramp-feasible path.
"""
import itertools

import numpy as np

from tapopt.feeder import parse_feeder_text


def dense_admittance(model, taps=None, ratios=None):
    """Nodal admittance; ``ratios`` (by OLTC id) overrides the tap-derived ratio."""
    taps = taps or {}
    ratios = ratios or {}
    n = model.n_nodes
    Y = np.zeros((n, n), dtype=complex)
    for br in model.branches:
        y = 1 / br.z
        i, k = br.from_node, br.to_node
        Y[i, i] += y
        Y[k, k] += y
        Y[i, k] -= y
        Y[k, i] -= y
    for sh in model.shunts:
        Y[sh.node, sh.node] += 1 / sh.z
    for d in model.oltcs:
        t = taps.get(d.id, 0)
        a = ratios.get(d.id, 1 + t / d.tau_max * (d.a_max - 1))
        y = 1 / d.z_t
        for i, j in zip(d.primary_nodes, d.secondary_nodes):
            Y[i, i] += a * a * y
            Y[j, j] += y
            Y[i, j] -= a * y
            Y[j, i] -= a * y
    return Y


def pinned_dense(model, Y):
    Yp = Y.copy()
    for s in model.slack_nodes:
        Yp[s, :] = 0
        Yp[s, s] = 1
    return Yp


def two_bus_voltage(v1, z, s_load):
    """Receiving-end voltage with constant-power load ``s_load`` (negative for injection).

    |V2|^4 + (2(RP + XQ) - |V1|^2)|V2|^2 + |z|^2 |S|^2 = 0, high root, then
    V2 = V1 / (1 + z conj(S) / |V2|^2).
    """
    R, X = z.real, z.imag
    P, Q = s_load.real, s_load.imag
    b = 2 * (R * P + X * Q) - abs(v1) ** 2
    c = abs(z) ** 2 * abs(s_load) ** 2
    m2 = (-b + np.sqrt(b * b - 4 * c)) / 2
    return v1 / (1 + z * np.conj(s_load) / m2)


def fixed_current_voltage(model, taps, i0, ratios=None):
    """Exact voltages when the non-slack currents are held at ``i0``."""
    Yp = pinned_dense(model, dense_admittance(model, taps, ratios))
    rhs = np.array(i0, dtype=complex)
    rhs[model.slack_nodes] = model.slack_voltage
    return np.linalg.solve(Yp, rhs)


def tap_paths(tau0, tau_max, dto, T):
    """All length-T integer paths from tau0 with steps <= dto inside [-tau_max, tau_max]."""
    paths = [[]]
    for _ in range(T):
        nxt = []
        for p in paths:
            last = p[-1] if p else tau0
            for d in range(-dto, dto + 1):
                t = last + d
                if abs(t) <= tau_max:
                    nxt.append(p + [t])
        paths = nxt
    return np.array(paths, dtype=int).reshape(len(paths), T)


def enumerate_optimum(h, w1, w2):
    """Brute-force min of w1 * max deviation + w2 * tap moves over every feasible trajectory."""
    per = [tap_paths(int(h.tau0[p]), int(h.tau_max[p]), int(h.dto_max[p]), h.T) for p in range(h.P)]
    best = np.inf
    step = h.ratio_step
    for combo in itertools.product(*[range(len(x)) for x in per]):
        taps = np.array([per[p][c] for p, c in enumerate(combo)])          # (P, T)
        da = (taps - h.tau0[:, None]) * step[:, None]
        dev = 0.0
        for t in range(h.T):
            c = np.asarray(h.candidates[t])
            v = h.vmag0[t, c] + da[:, t] @ h.gains[t][:, c]
            dev = max(dev, float(np.max(np.abs(v - 1.0))))
        full = np.concatenate([h.tau0[:, None], taps], axis=1)
        moves = int(np.abs(np.diff(full, axis=1)).sum())
        best = min(best, w1 * dev + w2 * moves)
    return best


def random_radial_text(rng, n_bus=6, n_oltc=1, load_kw=(20, 120), z_scale=0.02):
    """Single-phase radial network with a substation OLTC and optional line regulators."""
    lines = ["bus s 12.47 a", "bus b0 4.16 a", "slack s 1.0 0.0",
             f"oltc t0 s b0 {0.001 + 0.002 * rng.random():.5f} {0.01 + 0.01 * rng.random():.5f} 16 1.1 1"]
    regs = set(rng.choice(np.arange(1, n_bus), size=min(n_oltc - 1, n_bus - 1), replace=False).tolist()) if n_oltc > 1 else set()
    for k in range(1, n_bus):
        lines.append(f"bus b{k} 4.16 a")
        par = int(rng.integers(0, k))
        r = z_scale * (0.3 + rng.random())
        x = z_scale * (0.3 + rng.random())
        if k in regs:
            lines.append(f"oltc t{k} b{par} b{k} {r:.5f} {x:.5f} 16 1.1 1")
        else:
            lines.append(f"branch b{par}.a b{k}.a {r:.5f} {x:.5f}")
        p = rng.uniform(*load_kw)
        lines.append(f"load b{k}.a {p:.3f} {0.3 * p:.3f} l{k}")
    return "\n".join(lines) + "\n"


def random_radial(rng, **kw):
    return parse_feeder_text(random_radial_text(rng, **kw))


def random_horizon(rng, P=1, T=2, n=6, dto=1, spread=0.06):
    """Synthetic linearization data: positive, mostly real sensitivities around a random operating point."""
    from tapopt.otc import HorizonData

    mag = 1.0 + rng.uniform(-spread, spread, (T, n))
    ang = rng.uniform(-0.05, 0.05, (T, n))
    v0 = mag * np.exp(1j * ang)
    base = rng.uniform(0.3, 1.2, (P, n))
    sens = np.empty((T, P, n), dtype=complex)
    for t in range(T):
        sens[t] = base * (1 + rng.uniform(-0.1, 0.1, (P, n))) * np.exp(1j * ang[t])[None, :]
        sens[t] += 0.05j * rng.standard_normal((P, n))
    tau_max = np.full(P, 16)
    tau0 = rng.integers(-16, 17, P)
    cands = tuple(np.sort(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False)) for _ in range(T))
    return HorizonData(v0, sens, cands, tau0, tau_max, np.full(P, 1.1), np.full(P, dto))


def identity_gap(rng):
    """Largest entrywise gap between the admittance-route and impedance-route voltage changes.

    Both routes are package code; the check is that two independent
    formulations agree on a random network.
    """
    import scipy.sparse as sp

    from tapopt.powerflow import FeederSolver, nominal_injections
    from tapopt.sensitivity import delta_v_from_admittance, delta_y_linear, delta_z

    m = random_radial(rng, n_bus=int(rng.integers(3, 9)), n_oltc=int(rng.integers(1, 3)))
    solver = FeederSolver(m)
    taps = {d.id: int(rng.integers(-4, 5)) for d in m.oltcs}
    base = solver.solve(taps, nominal_injections(m, rng.uniform(0.2, 1.5)))
    fact = solver.factorization(taps)
    Y = solver.admittance(taps)
    i0 = Y.pinned() @ base.v
    dY = sp.csr_matrix((m.n_nodes, m.n_nodes), dtype=complex)
    for d in m.oltcs:
        a0 = d.ratio(taps[d.id])
        dY = dY + delta_y_linear(d, a0, a0 + rng.uniform(-0.01, 0.01), m.n_nodes)
    dv8 = delta_v_from_admittance(fact, dY, base.v, m.slack_nodes)
    dv10 = delta_z(fact, dY, m.slack_nodes) @ i0
    return np.max(np.abs(dv8 - dv10))
