"""Conformal candidate cleaning on top of the proden and pop learners.

Takes about a minute on one core.
"""
# %%
import numpy as np

from conformal_pll import CleanConfig, PartialDataset, generate_uniform, make_synthetic_blobs, run_method

x, y = make_synthetic_blobs(3000, d=10, k=5, spread=3.0, seed=100)
ds = generate_uniform(x[:2000], y[:2000], 0.5, seed=0)
test = PartialDataset(x[2000:], np.eye(5, dtype=bool)[y[2000:]], y[2000:])
cfg = CleanConfig(epochs=30, warmup=10, seed=0)

# %% [markdown]
# Same seed, same calibration split: the base learners simply never prune.

# %%
reports = {}
for method in ("proden", "conf-proden", "pop", "conf-pop"):
    _, reports[method] = run_method(ds, method, cfg, test=test, dataset_name="blobs")
    r = reports[method]
    print(f"{method:12s} test acc {r.final_test_acc:.4f}  "
          f"mean |s| {r.traces['mean_candidate_size'][0]:.2f} -> {r.traces['mean_candidate_size'][-1]:.2f}  "
          f"retention {r.traces['retention'][-1]:.3f}")

# %% [markdown]
# Per-epoch bookkeeping of the conformal pass.

# %%
tr = reports["conf-proden"].traces
print(" epoch  alpha_r  threshold  validity  mean|s|")
for e in range(cfg.warmup, cfg.epochs, 4):
    print(f"{e:6d}  {tr['alpha'][e]:.4f}   {tr['threshold'][e]:.4f}     "
          f"{tr['validity'][e]:.4f}   {tr['mean_candidate_size'][e]:.3f}")
