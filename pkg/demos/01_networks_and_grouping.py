# %% [markdown]
# Reaction networks, propensities and channel groups.
# Two channels with the same jump vector are invisible at the level of the
# copy-number path; group_channels finds them.

# %%
import numpy as np

from paththerm import (group_channels, lumped_rate, parse_network, preset, propensities, propensity,
                       serialize_network)

text = """
species X Y
reaction X -> Y : 1.0        # conversion
reaction X + Y -> 2 Y : 0.02 # autocatalytic conversion, same jump
"""
net = parse_network(text)
print(net.N, "species,", net.R, "reactions")
print("jump vectors:\n", net.jump_vectors)

# %%
g = group_channels(net)
for nu, members in g.groups.items():
    print(nu, "->", members, "(multigraph)" if len(members) > 1 else "")

# %%
state = [20, 5]
print("propensities:", [propensity(net, state, r) for r in range(net.R)])
print("lumped rate of (-1, +1):", lumped_rate(net, g, state, (-1, 1)))

# %% [markdown]
# The bistability-free Schlogl preset used throughout: two reversible
# steps with chemostatted A and B, so X changes by +1 or -1 through two
# channels each.

# %%
sch = preset("schlogl")
print(serialize_network(sch))
x = np.arange(0, 60, 10)[:, None]
print(np.column_stack([x, propensities(sch, x)]))
