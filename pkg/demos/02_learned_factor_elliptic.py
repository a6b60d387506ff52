# %% [markdown]
# # Learning the factor offline, solving online
#
# Training records are `(u, v_k) -> R(u, v_k)` along exact Newton trajectories.
# A kernel-ridge model predicts `R` at new inputs and the online solver uses
# the prediction in place of a factorization, with a nine-candidate line
# search over `(lambda, alpha)` keeping the residual decreasing.

# %%
import time

import numpy as np

from nkemu import (ScheduleState, chonknoris_solve, elliptic_problem, fit, generate_training_data,
                   nk_solve, periodic_kernel)
from nkemu.nk import default_draws
from nkemu.surrogate import training_error

spec = elliptic_problem()
kernel = periodic_kernel()

# %% [markdown]
# ## Offline: 64 draws, 5 warm-up Newton steps each, lambda = 0

# %%
t0 = time.perf_counter()
data = generate_training_data(spec, "chonknoris", kernel, M=64, n_warm=5, lambda_flow=0.0,
                              lambda_train_set=[0.0], seed=1)
model = fit(data, sigma2=1e-10)
print(f"{len(data)} records, packed factor length {data.factors.shape[1]}, "
      f"fit in {time.perf_counter() - t0:.1f}s")
print(f"mean training Frobenius error {training_error(model, data).mean():.1e}")

# %% [markdown]
# ## Online: fresh draws against exact Newton references

# %%
errors, iters = [], []
for d in default_draws(spec, kernel, 32, seed=2):
    ref = nk_solve(spec, d.u, d.v0, 0.0, 50, 1e-15).solution
    rep = chonknoris_solve(spec, model, d.u, d.v0, budget=20, reference=ref,
                           schedule=ScheduleState(lam=0.0))
    errors.append(rep.rel_l2_errors[-1])
    iters.append(rep.iterations)
print(f"median relative L2 error {np.median(errors):.1e} "
      f"(10%: {np.quantile(errors, 0.1):.1e}, 90%: {np.quantile(errors, 0.9):.1e})")
print(f"iterations: mean {np.mean(iters):.1f}, max {max(iters)}")

# %% [markdown]
# The convergence curve of one draw, with the accepted `(lambda, alpha)`:

# %%
print(rep.to_csv())
