"""Finite-T free energy of the d=1 lattice PAM over a small beta grid.

Run with ``python demos/free_energy_scan.py``; takes a few seconds.
"""

# %%
import numpy as np

from pamlab import estimators as est

betas = np.array([0.5, 1.0, 1.5, 2.0])
T, reps = 10.0, 200

# %%
rows = []
for k, b in enumerate(betas):
    fe = est.free_energy(float(b), 1.0, T, reps, seed=10 + k)
    rows.append((b, fe.value, fe.stderr, fe.metadata["lost_mass"]))
    print(f"beta={b:4.2f}  psi={fe.value:+.5f} +- {fe.stderr:.5f}  lost mass {fe.metadata['lost_mass']:.1e}")

# %%
# exponent of -psi in beta over the points that are negative by 3 stderr
psi = np.array([r[1] for r in rows])
se = np.array([r[2] for r in rows])
fit = est.beta4_fit(betas, psi, se)
if fit["conclusive"]:
    print(f"log(-psi) vs log(beta): slope {fit['slope']:.2f} +- {fit['slope_se']:.2f}")
else:
    print("too few strictly negative points for a slope")
