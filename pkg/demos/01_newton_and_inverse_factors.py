# %% [markdown]
# # Regularized Newton steps from an inverse Cholesky factor
#
# The update `v - R R^T J^T F` needs only two triangular products once the
# lower factor `R` with `R R^T = (lam I + J^T J)^{-1}` is known.  This script
# builds that factor for the 1-D nonlinear elliptic problem
# `-v'' + kappa v^3 = u` and runs the exact iteration.

# %%
import numpy as np

from nkemu import elliptic_problem, jacobian, nk_solve, periodic_kernel, residual
from nkemu.linalg import inverse_cholesky_factor
from nkemu.nk import apply_factor, default_draws

spec = elliptic_problem()          # 63 interior nodes, kappa = 50, Dirichlet ends
draw = default_draws(spec, periodic_kernel(), 1, seed=2)[0]
print("unknowns:", spec.n)

# %% [markdown]
# ## The factor and its defect
#
# For `lam = 0` the product `R R^T J^T J` should be the identity up to
# rounding; with `lam > 0` the identity is reached only after adding back `lam R R^T`.

# %%
J = jacobian(spec, draw.u, draw.v0)
for lam in (0.0, 1e-2):
    R = inverse_cholesky_factor(J, lam)
    defect = np.linalg.norm(R @ R.T @ (J.T @ J + lam * np.eye(spec.n)) - np.eye(spec.n))
    print(f"lam={lam:g}: lower triangular={np.allclose(R, np.tril(R))}, defect={defect:.1e}")

# %% [markdown]
# ## One step by hand, then the full iteration

# %%
R = inverse_cholesky_factor(J, 0.0)
F = residual(spec, draw.u, draw.v0)
v1 = draw.v0 - apply_factor(R, J.T @ F)
print("residual RMSE before / after one step:",
      f"{np.sqrt(np.mean(F**2)):.2e} / {np.sqrt(np.mean(residual(spec, draw.u, v1)**2)):.2e}")

trace = nk_solve(spec, draw.u, draw.v0, lam=0.0, max_iter=10, tol=1e-14)
for k, r in enumerate(trace.relative_residuals()):
    print(f"  iteration {k:2d}  relative residual {r:.2e}")
print("stop:", trace.stop_reason)
