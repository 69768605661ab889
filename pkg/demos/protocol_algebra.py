"""
A tour of the communication steps on vectors small enough to read.
"""

import numpy as np

from eglab import protocols

# Two workers that picked each other. With scalars the algebra is visible:
# each one moves by -alpha * (own - peer), so alpha = 1 swaps them outright.
params = [np.array([0.0]), np.array([2.0])]
mutual = protocols.build_gossip_sets({0: 1, 1: 0}, "elastic")
print("K-sets for a mutual pair:", mutual)
for alpha in (0.0, 0.25, 0.5, 1.0):
    out = protocols.elastic_gossip_step(params, mutual, alpha)
    print(f"  alpha={alpha:<5} ->", [float(p[0]) for p in out])

# Three workers in a chain: 0 and 2 both picked 1, so worker 1's K-set has
# two members and it pays both differences while 0 and 2 each pay one.
params = [np.array([0.0]), np.array([4.0]), np.array([8.0])]
sel = {0: 1, 1: 0, 2: 1}
sets = protocols.build_gossip_sets(sel, "elastic")
print("\nchain selections", sel, "-> K-sets", sets)
out = protocols.elastic_gossip_step(params, sets, 0.5)
print("  elastic alpha=0.5 ->", [float(p[0]) for p in out],
      " sum before", sum(float(p[0]) for p in params),
      " after", sum(float(p[0]) for p in out))

# Pull gossip averages one-sidedly: the sum is NOT conserved.
out = protocols.pull_gossip_step(params, sel)
print("  pull            ->", [float(p[0]) for p in out],
      " sum after", sum(float(p[0]) for p in out))

# Push gossip averages each worker with whoever pushed to it.
psets = protocols.build_gossip_sets(sel, "push", workers=3)
out = protocols.push_gossip_step(params, psets)
print("  push K-sets", psets, "->", [float(p[0]) for p in out])

# EASGD moves workers toward a shared center and the center toward them;
# workers-plus-center is the conserved total.
center = np.array([1.0])
out, c2 = protocols.easgd_step(params, center, 0.5)
print("\neasgd alpha=0.5  workers ->", [float(p[0]) for p in out],
      " center", float(c2[0]),
      " total", sum(float(p[0]) for p in out) + float(c2[0]))

# Full consensus at alpha = 1/|W| parks every worker exactly on the mean.
out = protocols.full_consensus_step(params, 1.0 / 3.0)
print("full consensus at 1/3 ->", [float(p[0]) for p in out])
