"""
Streaming per-label activation statistics
=========================================

The server never keeps old activations. For every label it holds a running
weighted mean and variance and folds each new row in as it arrives. Later
rows get larger weights, so the estimate tracks a drifting client model.
"""

import numpy as np

from gas_sim import LabelGaussian, WeightingFn, batch_weighted_stats_oracle

rng = np.random.default_rng(0)

# A drifting stream: the true mean walks from 0 to 3 over 500 rows.
n = 500
drift = np.linspace(0.0, 3.0, n)[:, None]
rows = drift + rng.standard_normal((n, 4))

###############################################################################
# Fold the rows in one at a time with s(n) = n and compare with a two-pass
# computation over the whole stream.

s = WeightingFn("linear")
g = LabelGaussian(4)
for i, r in enumerate(rows, start=1):
    g.update(r, s(i))

mean, var = batch_weighted_stats_oracle(rows, [s(i) for i in range(1, n + 1)])
print("streamed mean  ", np.round(g.mean, 4))
print("two-pass mean  ", np.round(mean, 4))
print("max |difference|", np.abs(g.var - var).max())

###############################################################################
# Heavier weighting on recent rows pulls the estimate toward the current
# mean (3.0) and away from the plain average (1.5).

for label, w in [("constant", WeightingFn("poly", 1.0, 0.0)),
                 ("linear", WeightingFn("linear")),
                 ("n^2", WeightingFn("poly", 1.0, 2.0)),
                 ("exp(0.01 n)", WeightingFn("exp", 1.0, 0.01))]:
    g = LabelGaussian(4)
    for i, r in enumerate(rows, start=1):
        g.update(r, w(i))
    print(f"{label:12s} mean of first coordinate = {g.mean[0]:.3f}")
