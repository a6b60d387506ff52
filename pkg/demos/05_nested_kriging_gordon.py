# %% [markdown]
# # Coefficient features and a mixture of experts
#
# Every Jacobian in this package has the form `a d_xx + b d_x + c` on the
# grid.  Feeding the model the coefficient fields `(a, b, c)` instead of the
# state lets one model serve equations it was never trained on.  Three
# experts are trained (elliptic, Burgers, and a 1-D Darcy equation) and
# combined by nested Kriging: at each query the weights minimize the
# aggregated prediction variance subject to summing to one.
#
# The held-out equations are the sine-Gordon and Klein-Gordon time steps.

# %%
import time

import numpy as np

from nkemu import RunConfig, bench
from nkemu.surrogate import aggregate_weights

cfg = RunConfig.profile("fonknoris", problem_params={"expert_M": [24, 24, 24], "steps": 30},
                        validation={"count": 1, "budget": 200})
t0 = time.perf_counter()
datasets = bench.generate(cfg)
ensemble = bench.train(cfg, datasets)
print("records per expert:", [len(d) for d in datasets],
      f"  shared lengthscale {ensemble.lengthscale:.3g}  ({time.perf_counter() - t0:.0f}s)")

# %% [markdown]
# ## Aggregation weights at an elliptic training input
#
# Near the elliptic expert's data its weight dominates.

# %%
x = ensemble.experts[0].X[0]
w = aggregate_weights(ensemble, x)
print("weights:", np.round(w.alpha, 4) + 0.0, " sum:", w.alpha.sum())

# %% [markdown]
# ## Held-out marches

# %%
rep = bench.evaluate(cfg, ensemble)
for r in rep.realizations:
    print(f"{r.label:6s} median per-step rel L2 {np.median(r.curve):.1e}, "
          f"worst {np.max(r.curve):.1e}, {r.iterations} iterations over {len(r.curve)} steps")
