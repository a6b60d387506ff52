# %% [markdown]
# # Two-dimensional problems through run configurations
#
# The command-line tool is a thin layer over `nkemu.bench`; the same
# functions can be driven from Python.  A `RunConfig` is a validated nested
# dictionary, and its hash names the output directory.
#
# * Nonlinear Darcy flow on a 20 x 20 grid: how accuracy grows with the
#   iteration budget.
# * The Calderon inverse problem on a 9 x 9 grid: a log-conductivity is
#   recovered from boundary measurements of four excitations.

# %%
import tempfile

from nkemu import RunConfig, bench

out = tempfile.mkdtemp()

# %% [markdown]
# ## Darcy: errors after 10 and after 100 iterations

# %%
cfg = RunConfig.profile("darcy", output_dir=out)
print("config hash:", cfg.hash)
bench.cmd_gen_data(cfg)
bench.cmd_train(cfg)
rep = bench.cmd_eval(cfg)
m = rep.metrics
print(f"median rel L2 after 10 iterations {m['median_at_10']:.1e}, "
      f"after 100 {m['median_at_100']:.1e}, final {m['median_final']:.1e}")

# %% [markdown]
# ## Calderon: training records at the initial guess only
#
# The desk profile trains on 64 conductivity draws; the reference is the
# true conductivity used to simulate the measurements.

# %%
cfg = RunConfig.profile("calderon", output_dir=out)
bench.cmd_gen_data(cfg)
bench.cmd_train(cfg)
rep = bench.cmd_eval(cfg)
m = rep.metrics
print(f"{m['fraction_le_1e-08']:.0%} of {m['count']} draws recovered to rel L2 <= 1e-8; "
      f"median {m['median_final']:.1e}, mean iterations {m['mean_iterations']:.0f}")
print("note:", rep.notes)

# %% [markdown]
# Both reports in one table, one row per config hash (the `report` command):

# %%
paths = [bench.run_dir(RunConfig.profile(p, output_dir=out)) / "report.json"
         for p in ("darcy", "calderon")]
print(bench.summary_markdown(bench.cmd_report(paths, f"{out}/summary")))
