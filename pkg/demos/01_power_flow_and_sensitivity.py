"""
Power flow and tap sensitivities on the two-OLTC feeder
=======================================================

Solve one operating point, build the linear tap model around it and see
how well it predicts a real tap move.
"""

import numpy as np

from tapopt import FeederSolver, build_sensitivity, nominal_injections, scale_pv_penetration
from tapopt.sim import load_bundled

# a noon snapshot: light load, PV near rating, 150 % penetration
model = scale_pv_penetration(load_bundled("feeder40"), 150)
solver = FeederSolver(model)
inj = nominal_injections(model, load_scale=0.4, pv_scale=0.9)
base = solver.solve(model.zero_taps(), inj, check=True)

free = ~model.slack_mask
names = [n.name for n in model.nodes]
print(f"{model.n_nodes} nodes, converged in {base.iterations} iterations")
print(f"highest {names[np.argmax(np.where(free, base.vmag, 0))]} at {base.vmag[free].max():.4f} p.u.")
print(f"lowest  {names[np.argmin(np.where(free, base.vmag, 9))]} at {base.vmag[free].min():.4f} p.u.")

# sensitivities: d|V|/d(ratio) for each OLTC, one vector per device
lin = build_sensitivity(solver, model.zero_taps(), base)
for dev, g in zip(model.oltcs, lin.gains):
    per_step = g * dev.ratio_step
    print(f"{dev.id}: one tap step moves |V| by {per_step[free].min():+.4f} .. {per_step[free].max():+.4f} p.u.")

# predict two steps down on the substation OLTC and compare with the real solve
taps = {"sub": -2, "reg": 0}
pred = lin.predict_vmag_taps(model, taps)
real = solver.solve(taps, inj, v_init=base.v, check=True).vmag
err = (pred - real)[free]
print(f"two-step prediction: max |E| {np.abs(err).max():.2e} p.u., mean |E| {np.abs(err).mean():.2e} p.u.")
