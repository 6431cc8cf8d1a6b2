"""
Risk of the selected estimator across sample sizes
==================================================

Fit the log-log slope of the Monte Carlo risk against n and compare it
with the minimax exponent for the kernel order in use.  A quick run with
few replications; the acceptance suite uses 100.
"""

from kdeselect import ProductKernel
from kdeselect.experiments import get_density, rate_grid, rate_study

K = ProductKernel.from_name("triangular", 2, 1)
sizes = [500, 1000, 2000, 4000, 8000]
for n in sizes:
    H = rate_grid(n, s=2.0)
    print(f"n={n}: H from {H.h_min[0]:.2e} to {H.h_max[0]:.3f}, {len(H)} nodes")

rep = rate_study(get_density("gaussian"), K, sizes, reps=20, seed=3, s=2.0)
for row in rep.rows:
    print(f"n={row['n']:5d}  risk {row['risk']:.4f} +- {row['se']:.4f}")
print(f"slope {rep.summary['slope']:.3f}, theory {rep.summary['theory_slope']:.3f}")
