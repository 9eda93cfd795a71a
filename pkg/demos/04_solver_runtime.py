"""
How MILP solve time grows with the number of OLTCs
==================================================

Each instance is a 10-step horizon on a generated 1000-node feeder.
"""

import numpy as np

from tapopt.sim.studies import runtime_benchmark

rows, fit = runtime_benchmark(range(2, 9), n_nodes=1000, horizon=10, repeats=5)
for r in rows:
    print(f"P={r.P}  mean {r.mean_s * 1e3:7.1f} ms  max {r.max_s * 1e3:7.1f} ms  B&B nodes {r.mean_nodes:5.1f}")

# cubic fit, highest power first
print("fit:", np.round(fit, 5))
print("extrapolated P=12:", f"{np.polyval(fit, 12):.2f} s")
