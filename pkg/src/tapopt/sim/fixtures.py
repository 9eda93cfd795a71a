"""Bundled test feeders and a seeded generator for large radial feeders."""
from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from ..feeder import FeederModel, parse_feeder, parse_feeder_text

BUNDLED = ("feeder13", "feeder40")


def bundled_feeder_path(name: str) -> Path | None:
    """Path of a bundled feeder given ``feeder13`` / ``feeder40`` (with or without ``.txt``)."""
    stem = name[:-4] if name.endswith(".txt") else name
    if stem not in BUNDLED or ("/" in name or "\\" in name):
        return None
    return Path(str(resources.files("tapopt") / "data" / f"{stem}.txt"))


def load_bundled(name: str) -> FeederModel:
    path = bundled_feeder_path(name)
    if path is None:
        raise KeyError(f"no bundled feeder {name!r}; choose from {', '.join(BUNDLED)}")
    return parse_feeder(path)


def generate_feeder_text(n_nodes: int = 1000, n_oltcs: int = 4, seed: int = 0, pv_share: float = 0.4) -> str:
    """Random radial feeder of exactly ``n_nodes`` nodes (at least 6).

    A three-phase backbone grows by attaching each new bus to one of the
    last few buses, and single-phase laterals of one to four buses hang off
    the backbone. OLTC 0 sits at the substation; the remaining ``n_oltcs -
    1`` replace backbone branches spaced evenly by depth, each acting as a
    line regulator for everything behind it.
    """
    if n_oltcs < 1:
        raise ValueError("need at least one OLTC")
    rng = np.random.default_rng(seed)
    lines = [f"name gen{n_nodes}_{n_oltcs}", "base 1.0", "bus src 12.47 abc", "bus b0 4.16 abc", "slack src 1.0 0.0"]
    body, loads, pvs = [], [], []
    count = 6
    trunk = ["b0"]
    parent = {"b0": None}
    depth = {"b0": 0}
    edges = []
    lateral_id = 0

    def add_load(node, tag, scale=1.0):
        p = float(rng.uniform(8, 30)) * scale
        loads.append(f"load {node} {p:.3f} {0.3 * p:.3f} ld_{tag}")
        if rng.random() < pv_share:
            pvs.append(f"pv {node} {float(rng.uniform(5, 25)):.3f} pv_{tag}")

    if n_nodes < 6:
        raise ValueError("need at least 6 nodes")
    while count < n_nodes:
        k = len(trunk)
        if n_nodes - count < 3:
            # top up with a short single-phase lateral off the last backbone bus
            prev = f"{trunk[-1]}.a"
            for j in range(n_nodes - count):
                lat = f"l{lateral_id}_{j}"
                lines.append(f"bus {lat} 4.16 a")
                body.append(f"branch {prev} {lat}.a 0.00500 0.00500")
                add_load(f"{lat}.a", lat)
                prev = f"{lat}.a"
            break
        par = trunk[max(0, k - int(rng.integers(1, 4)))]
        name = f"b{k}"
        lines.append(f"bus {name} 4.16 abc")
        r = float(rng.uniform(0.0008, 0.002))
        edges.append((par, name, r, 2.0 * r))
        trunk.append(name)
        parent[name] = par
        depth[name] = depth[par] + 1
        count += 3
        for ph in "abc":
            add_load(f"{name}.{ph}", f"{name}{ph}", 1.5)
        if count < n_nodes and rng.random() < 0.7:
            ph = "abc"[int(rng.integers(0, 3))]
            prev = f"{name}.{ph}"
            for j in range(int(rng.integers(1, 5))):
                if count >= n_nodes:
                    break
                lat = f"l{lateral_id}_{j}"
                lines.append(f"bus {lat} 4.16 {ph}")
                rr = float(rng.uniform(0.003, 0.008))
                body.append(f"branch {prev} {lat}.{ph} {rr:.5f} {rr:.5f}")
                add_load(f"{lat}.{ph}", lat)
                prev = f"{lat}.{ph}"
                count += 1
            lateral_id += 1

    # regulators replace backbone branches at evenly spaced depths
    reg_edges = set()
    if n_oltcs > 1 and edges:
        order = sorted(range(len(edges)), key=lambda e: (depth[edges[e][1]], e))
        picks = np.linspace(0, len(order) - 1, n_oltcs + 1)[1:-1]
        for q in picks:
            e = order[int(round(q))]
            while e in reg_edges:
                e = (e + 1) % len(edges)
            reg_edges.add(e)
    lines.append("oltc t0 src b0 0.001 0.01 16 1.1 1")
    for e, (a, b, r, x) in enumerate(edges):
        if e in reg_edges:
            lines.append(f"oltc t{len([q for q in reg_edges if q <= e])} {a} {b} {r:.5f} {x:.5f} 16 1.1 1")
        else:
            for ph in "abc":
                lines.append(f"branch {a}.{ph} {b}.{ph} {r:.5f} {x:.5f}")
    return "\n".join(lines + body + loads + pvs) + "\n"


def generate_feeder(n_nodes: int = 1000, n_oltcs: int = 4, seed: int = 0) -> FeederModel:
    return parse_feeder_text(generate_feeder_text(n_nodes, n_oltcs, seed), name=f"gen{n_nodes}_{n_oltcs}")
