"""Multi-seed comparison: paired t-tests, win/tie/loss tally and the JSON report.

The same pipeline is available from the shell::

    conformal-pll train blobs.txt --method proden --seeds 0..4 --out runs/
    conformal-pll train blobs.txt --method conf-proden --seeds 0..4 --out runs/
    conformal-pll evaluate runs/ --out summary.json
"""
# %%
import tempfile
from pathlib import Path

import numpy as np

from conformal_pll import CleanConfig, PartialDataset, generate_uniform, make_synthetic_blobs, run_method
from conformal_pll.evaluation import compare_all, emit_report, format_table, load_report, wins_ties_losses

# %%
reports = []
for seed in range(5):
    x, y = make_synthetic_blobs(1500, d=10, k=5, spread=3.0, seed=100 + seed)
    ds = generate_uniform(x[:1000], y[:1000], 0.5, seed=seed)
    test = PartialDataset(x[1000:], np.eye(5, dtype=bool)[y[1000:]], y[1000:])
    cfg = CleanConfig(epochs=20, warmup=5, seed=seed)
    for method in ("proden", "conf-proden"):
        reports.append(run_method(ds, method, cfg, test=test, dataset_name="blobs")[1])

# %% [markdown]
# Accuracies are compared in percentage points, paired by seed.

# %%
comparisons = compare_all(reports)
for c in comparisons:
    t = "n/a" if c.t is None else f"{c.t:.3f}"
    print(f"{c.method_a} vs {c.method_b}: t = {t}, {c.outcome}")
print(format_table(reports, comparisons))

# %%
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "summary.json"
    emit_report(reports, path, comparisons, wins_ties_losses(comparisons))
    runs, comps = load_report(path)
    print(f"reloaded {len(runs)} runs and {len(comps)} comparison(s) from {path.name}")
