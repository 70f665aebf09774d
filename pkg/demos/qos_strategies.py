"""
How much does cooperation buy each user?
========================================

Drop uniform users on the region and let each one pick a station under four
access policies of growing freedom: the nearest own-operator station, the best
own-operator station, the best station of any operator on the same radio
technology, and the best station of any kind.
"""

import numpy as np

from xl5g.experiments import QosConfig, QosWorld
from xl5g.geo_dataset import load_fixture

stations = load_fixture()
config = QosConfig(n_users=5000, seed=7)
world = QosWorld(config, stations)

# %%
# Utilities are a keyed hash of (seed, user, station), so every policy sees
# the same value for the same pairing and the policies nest.
for radius in (400.0, 1000.0, 2000.0):
    util = world.utilities(radius)
    row = "  ".join(f"{s}={np.mean(util[s]):.3f}" for s in config.strategies)
    print(f"r={radius:6.0f}  {row}")

# %%
# Fraction of users who find no station at all within a small radius.
_, best = world.choose("HeterSTRA", 200.0)
print("uncovered at 200 m:", float(np.mean(best == 0.0)))
