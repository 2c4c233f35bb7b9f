"""Two exact identities of the solver: the mean-one martingale and the corridor decomposition.

Run with ``python demos/martingale_and_decomposition.py``; takes a few seconds.
"""

# %%
import numpy as np

from pamlab import estimators as est
from pamlab.env_field import EnvironmentField, LatticeSpec
from pamlab.spde_solver import SolverSpec, corridor_range, evolve_corridors, log_partition_function

# %%
# Q[Z_T] = 1 on a periodic box
m = est.martingale_check(0.5, 1.0, 5.0, 2000, seed=1)
print(f"mean Z_T = {m.value:.4f} +- {m.stderr:.4f}  (z = {m.metadata['z']:+.2f})")

# %%
# Z_T equals the sum of the corridor-restricted partition functions
lat = LatticeSpec(1, 8)
n, blocks = 16, 2
spec = SolverSpec(lat, 1.0, 1.0, n * blocks, dt=2.0 ** -5)
labels = corridor_range(lat, n)
env = EnvironmentField(lat, 7)
parts = evolve_corridors(env, spec, n, blocks, lambda k, prefix: labels)
log_total = np.logaddexp.reduce(np.array([float(v) for v in parts.values()]))
log_full = log_partition_function(env, spec)
print(f"{len(parts)} sequences: log sum {log_total:.12f}, log Z_T {log_full:.12f}")
top = sorted(parts.items(), key=lambda kv: -float(kv[1]))[:3]
for key, v in top:
    print(f"  corridors {key}: share {np.exp(float(v) - log_full):.4f}")
