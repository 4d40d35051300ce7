"""Partial labels: candidate-set generation and the text file format.

Run with ``python demos/01_partial_labels.py``.
"""
# %%
import tempfile
from pathlib import Path

import numpy as np

from conformal_pll import (
    generate_instance_dependent,
    generate_uniform,
    load_dataset,
    make_synthetic_blobs,
    save_dataset,
    split,
)
from conformal_pll.pll import fit_supervised

# %% [markdown]
# Start from a supervised toy problem: five Gaussian blobs in ten dimensions.

# %%
x, y = make_synthetic_blobs(1000, d=10, k=5, spread=3.0, seed=0)
print("class counts:", np.bincount(y))

# %% [markdown]
# Uniform corruption adds every wrong label independently with probability q,
# so the expected candidate-set size is 1 + q (k - 1).

# %%
for q in (0.1, 0.3, 0.5):
    ds = generate_uniform(x, y, q, seed=1)
    print(f"q={q}: mean |s| = {ds.mean_candidate_size():.3f} (expected {1 + q * 4:.1f})")

# %% [markdown]
# Instance-dependent corruption asks a supervised proxy how confusable each
# wrong label is; labels the proxy nearly confuses with the truth are added
# most often.

# %%
proxy = fit_supervised(x, y, epochs=5, seed=0)
ds = generate_instance_dependent(x, y, proxy, seed=1)
print(f"instance-dependent: mean |s| = {ds.mean_candidate_size():.3f}")

# %% [markdown]
# On disk a dataset is a header ``n d k`` followed by ``CANDIDATES|TRUE|FEATURES``
# records with 1-based labels. Floats are written with ``repr`` so reloading
# is exact.

# %%
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "blobs.txt"
    save_dataset(ds, path)
    print(path.read_text().splitlines()[1][:80], "...")
    assert load_dataset(path) == ds

# %% [markdown]
# Every seeded run draws the same calibration split.

# %%
parts = split(ds, val_frac=0.2, seed=0)
print(f"train {len(parts.train_idx)}, calibration {len(parts.val_idx)}")
