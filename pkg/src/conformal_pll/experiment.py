"""Run one named method on one seed; shared by the CLI and the demos."""
from __future__ import annotations

from dataclasses import replace
from typing import Optional

from .conformal import CleanConfig, train_conformal_clean
from .data import PartialDataset, split
from .pll import train_pop, train_proden

METHODS = ("proden", "pop", "conf-proden", "conf-pop")


def run_method(
    ds: PartialDataset,
    method: str,
    config: CleanConfig,
    *,
    test: Optional[PartialDataset] = None,
    dataset_name: str = "",
    callback=None,
):
    """Train ``method`` on ``ds`` with ``config.seed``; returns ``(model, report)``.

    Every method sees the same seeded split: the base methods train on the
    training part only, so a conformal run whose warm-up covers all epochs
    reproduces its base method exactly.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    if method.startswith("conf-"):
        cfg = replace(config, base=method[len("conf-"):])
        return train_conformal_clean(ds, cfg, test=test, dataset_name=dataset_name, callback=callback)
    parts = split(ds, config.val_frac, config.seed)
    train = ds.subset(parts.train_idx)
    trainer = train_proden if method == "proden" else train_pop
    return trainer(train, config, test=test, n_total=ds.n, dataset_name=dataset_name)
