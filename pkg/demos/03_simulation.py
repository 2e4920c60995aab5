# %% [markdown]
# Exact stochastic simulation.  Direct and two-stage channel selection
# sample the same process; time reversal maps each channel to its pair.

# %%
import math

import numpy as np

from paththerm import RngStream, StateBox, build_generator, discretize, preset, reverse, simulate, stationary
from paththerm.cme import total_variation

net = preset("schlogl")
gen = build_generator(net, box=StateBox([0], [200]))
p = stationary(gen)

for mode in ("direct", "two_stage"):
    tr = simulate(net, [15], math.inf, RngStream(1, 0), mode=mode, max_events=300_000)
    occ = np.bincount(gen.box.indices(tr.states), weights=tr.waits, minlength=gen.size)
    print(f"{mode:9s} events={tr.n_events} t_final={tr.t_final:9.1f} TV={total_variation(occ / occ.sum(), p):.4f}")
    print("          channel counts:", np.bincount(tr.channels, minlength=net.R))

# %%
short = simulate(net, [15], 0.2, RngStream(1, 1))
back = reverse(short)
print("forward channels:", short.channels, " reverse channels:", back.channels)
print("involution:", reverse(back) == short)
print("grid view:", discretize(short, 4).states.ravel())
