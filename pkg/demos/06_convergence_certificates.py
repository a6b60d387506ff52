# %% [markdown]
# # Checking inexact Newton theory numerically
#
# An inexact Newton step whose linearized residual is at most `theta` times
# the residual converges when `theta < 1`.  For a learned factor, `theta`
# combines the Tikhonov bias `lam / (lam + sigma*^2)` and the model error
# `M^2 eps`.  This script measures the pieces and compares iterates with
# the Kantorovich majorant.

# %%
import numpy as np

from nkemu import ExactFactorModel, Grid, elliptic_problem, fit, generate_training_data, nk_solve
from nkemu import analysis
from nkemu.nk import default_draws
from nkemu.sampling import periodic_kernel

# %% [markdown]
# ## Closed-form constants on the unit torus
#
# For `-v'' + v^3 = f` in the ball of radius `r`, `L = 3r/(2 pi^2)` and
# `M = 1 + 3r^2/(4 pi^2)`; `eta` is the `H^-1` norm of `f`.

# %%
g = Grid((1024,), "periodic")
f = np.sin(2 * np.pi * g.axis_coords(0))
c = analysis.elliptic_constants(1.0, 0.0, 0.0, f, g)
print(f"L = {c.L:.6f}, M = {c.M:.6f}, eta = {c.eta:.6f} "
      f"(Fourier value {1 / (2 * np.pi * np.sqrt(2)):.6f}), h = {c.h_tilde:.4f}")
print("majorant:", np.round(analysis.majorant_sequence(c.eta, 1.0, c.L_tilde, 5), 8))

# %% [markdown]
# ## Measured forcing of a trained model
#
# The measured ratio `||J d + F|| / ||F||` is tiny.  The bound is not,
# because `M^2 eps` multiplies a small design error by the squared Jacobian
# norm (about 1.6e4 on this grid).

# %%
spec = elliptic_problem()
data = generate_training_data(spec, "chonknoris", periodic_kernel(), 64, 5, 0.0, [0.0], 1)
model = fit(data)
d = default_draws(spec, periodic_kernel(), 1, 2)[0]
fm = analysis.empirical_forcing(spec, model, d.u, d.v0, 0.0)
print(f"ratio {fm.ratio:.1e}  bound {fm.theta:.1e}  (eps {fm.eps_lambda:.1e}, M {fm.M:.0f})")

# %% [markdown]
# ## Majorant domination with exact factors
#
# Start close to a solution so the certificate applies.  With `lam = 0` the
# increments stay under the majorant steps.  With fixed `lam > 0` the
# iteration converges only linearly, at a rate near `lam / (lam + sigma*^2)`.
# The majorant steps shrink quadratically, so they fall below the actual
# increments after a few steps.

# %%
vs = nk_solve(spec, d.u, d.v0, 0.0, 50, 1e-15).solution
v0 = vs + 1e-2 * np.sin(np.pi * spec.grid.axis_coords(0))
for lam in (0.0, 1.0):
    run = analysis.certify_elliptic_run(spec, ExactFactorModel(), d.u, v0, lam, k_max=6)
    steps = np.diff(run.majorant)
    print(f"lam={lam:g}: h={run.certificate.h_tilde:.2e}, dominated={run.dominated}")
    for k, (a, b) in enumerate(zip(run.increments, steps)):
        print(f"   step {k}: |v_k+1 - v_k| = {a:.2e}   t_k+1 - t_k = {b:.2e}")

# %% [markdown]
# ## Local order with an adaptive lambda
#
# With `lam_k = 0.1 ||F(v_k)||` the Tikhonov bias shrinks with the residual
# and convergence stays quadratic.

# %%
v0 = vs + 0.3 * np.max(np.abs(vs)) * np.sin(3 * np.pi * spec.grid.axis_coords(0))
errors, _ = analysis.exact_order_trace(spec, d.u, v0, c=0.1)
print("errors:", " ".join(f"{e:.1e}" for e in errors))
print(f"fitted order {analysis.fit_local_order(errors, floor=1e-11):.2f}")
