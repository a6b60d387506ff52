# %% [markdown]
# # A learned solver inside an implicit time march
#
# Each implicit Euler step of viscous Burgers' equation is a nonlinear solve
# for `v` given the previous state `u`.  Training records are collected along
# reference marches; at run time every step is solved with predicted factors,
# starting from the previous state.  Errors can build up over the march, so
# each step must converge to near machine precision.

# %%
import time

import numpy as np

from nkemu import burgers_problem, emulated_march, fit, generate_training_data, reference_march
from nkemu.nk import rel_l2
from nkemu.sampling import sample_sum_of_sines

spec = burgers_problem(nx=63, nt=21)      # 20 steps of size 1/20, nu = 1/50
print("unknowns per step:", spec.n, " dt:", spec.params["dt"])

# %% [markdown]
# ## Offline: records from 8 reference marches, lambda_train = 1e-2

# %%
t0 = time.perf_counter()
data = generate_training_data(spec, "chonknoris", None, M=8, n_warm=1, lambda_flow=0.0,
                              lambda_train_set=[1e-2], seed=11, march_steps=20)
model = fit(data, sigma2=1e-10)
print(f"{len(data)} records, trained in {time.perf_counter() - t0:.1f}s")

# %% [markdown]
# ## Online: a new sum-of-sines initial condition

# %%
f0 = sample_sum_of_sines(spec.grid, 12, 0)
ref = reference_march(spec, f0, 20)
reports = []
em = emulated_march(spec, model, f0, 20, budget=50, reports=reports)
per_step = [rel_l2(a, b) for a, b in zip(em[1:], ref[1:])]
print("step  rel L2 vs reference  iterations")
for k, (e, r) in enumerate(zip(per_step, reports), start=1):
    print(f"{k:4d}  {e:19.2e}  {r.iterations:10d}")
print(f"final-time error {per_step[-1]:.1e}")
