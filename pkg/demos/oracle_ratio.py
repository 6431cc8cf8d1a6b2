"""
How close is the selected bandwidth to the best one?
====================================================

For each replication, compare the error of the selected estimator with
the smallest error over the fixed bandwidths of the grid.
"""

import numpy as np

from kdeselect import ProductKernel
from kdeselect.experiments import get_density, oracle_ratio_study

K = ProductKernel.from_name("triangular", 1, 1)
for name in ("gaussian", "mixture", "bump"):
    rep = oracle_ratio_study(get_density(name), K, n=1000, reps=40, seed=7, s=2.0)
    ratios = np.array(rep.rows[0]["ratios"])
    chosen = sorted({round(h[0], 4) for h in rep.rows[0]["selected"]})
    print(f"{name:8s} median {np.median(ratios):.3f}  p90 {np.percentile(ratios, 90):.3f}  "
          f"(constant {rep.summary['theory_constant']:.0f})  selected h {chosen}")
