# %% [markdown]
# Stationary master-equation solutions on a truncated box.
# One-step chains are detailed balanced whatever the driving; the driven
# three-state cycle is not.

# %%
import numpy as np

from paththerm import (StateBox, build_generator, detailed_balance_residual, gibbs_shannon_entropy,
                       mean_entropy_production_rate, preset, relaxation_time, stationary, transient)
from paththerm.cme import Distribution

net = preset("schlogl")
gen = build_generator(net, box=StateBox([0], [200]))
p = stationary(gen)
print("states:", gen.size, " boundary mass:", gen.boundary_mass(p))
print("mean X:", p.mean()[0], " entropy:", gibbs_shannon_entropy(p))
print("detailed-balance residual:", detailed_balance_residual(gen, p))
print("entropy production rate (channel resolved):", mean_entropy_production_rate(gen, p))

# %%
# relaxation from an empty reactor
tr = relaxation_time(gen)
p0 = Distribution.delta(gen.box, [0])
for t in (0.5, 2.0, 10.0, 50 * tr):
    pt = transient(gen, p0, t)
    print(f"t={t:8.2f}  mean={pt.mean()[0]:7.3f}  TV to stationary={0.5 * np.abs(pt.probabilities - p.probabilities).sum():.2e}")

# %%
cyc = preset("driven_cycle")
gc = build_generator(cyc, box=StateBox.reachable(cyc, [1, 0, 0], [1, 1, 1]))
pc = stationary(gc)
print("cycle stationary law:", pc.probabilities)
print("cycle residual:", detailed_balance_residual(gc, pc))
print("cycle entropy production:", mean_entropy_production_rate(gc, pc), "=", 3 * np.log(4) * 0.5)
