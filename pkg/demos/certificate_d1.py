"""Evaluate the d=1 fractional-moment bound chain on a small instance.

Run with ``python demos/certificate_d1.py``; takes under a minute.  Each
printed term is one inequality of the chain with its Monte Carlo error.
"""

# %%
from pamlab.coarse_grain import CoarseGrainSpec, d1_bound_certificate

spec = CoarseGrainSpec(1, 16, 2, C1=4.0)
rep = d1_bound_certificate(spec, 1.0, 2000, seed=3, L=32, link_reps=500)

# %%
for t in rep["terms"]:
    flag = "" if "holds" not in t else ("holds" if t["holds"] else "FAILS")
    print(f"{t['name']:<28} {t['value']:12.5g} +- {t['stderr']:.2g}  {t['inequality']:<30} {flag}")
print(f"LHS {rep['lhs']:.4f}  RHS {rep['rhs']:.4f}  pass {rep['pass']}")
