"""Split-conformal calibration on pseudo-labelled validation data and conformal candidate cleaning.

Each epoch the calibration scores ``max_{y in s_i} f_y(x_i)`` are taken on the
held-out split; after the warm-up epochs the training candidate sets are
intersected with the conformal sets ``{y : f_y(x) >= t - delta3}`` whenever
that intersection is nonempty.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .data import PartialDataset, split
from .pll import PopCleaner, TrainConfig, fit

ALPHA_CAP = 0.999


@dataclass
class CleanConfig(TrainConfig):
    alpha: Union[str, float] = "adaptive"
    delta3: float = 0.0
    val_frac: float = 0.2
    base: str = "proden"

    def __post_init__(self):
        super().__post_init__()
        if self.alpha != "adaptive":
            if not 0.0 < float(self.alpha) < 1.0:
                raise ValueError("a fixed alpha must lie in (0, 1)")
            self.alpha = float(self.alpha)
        if self.delta3 < 0:
            raise ValueError("delta3 must be non-negative")
        if not 0.0 < self.val_frac < 1.0:
            raise ValueError("val_frac must lie in (0, 1)")
        if self.base not in ("proden", "pop"):
            raise ValueError(f"unknown base method {self.base!r}")


def candidate_scores(probs, candidates) -> np.ndarray:
    """Per-row maximum probability over the candidate labels."""
    return np.where(np.asarray(candidates, dtype=bool), probs, -np.inf).max(axis=1)


def validation_scores(model, ds_val: PartialDataset) -> np.ndarray:
    if ds_val.n == 0:
        raise ValueError("empty validation set")
    return candidate_scores(model.predict_proba(ds_val.features), ds_val.candidates)


def adaptive_alpha(probs, candidates) -> float:
    """Mean probability mass placed on labels outside the candidate sets."""
    s = np.asarray(candidates, dtype=bool)
    return float(np.where(s, 0.0, probs).sum(axis=1).mean())


def _count_at_most(alpha, m):
    # largest c with c / m <= alpha, evaluated the same way as the empirical CDF
    c = min(int(math.floor(alpha * m)), m)
    while c < m and (c + 1) / m <= alpha:
        c += 1
    while c > 0 and c / m > alpha:
        c -= 1
    return c


def empirical_threshold(scores, alpha: float) -> float:
    """``sup{t in [0, 1] : F(t) <= alpha}`` for the empirical CDF ``F`` of ``scores``.

    With ascending order statistics ``s(1) <= ... <= s(m)`` and ``c`` the
    largest integer with ``c / m <= alpha`` this is ``s(c + 1)``. The 1.0 cap
    for ``c = m`` is kept for safety but cannot trigger while ``alpha < 1``.
    """
    s = np.sort(np.asarray(scores, dtype=np.float64))
    m = len(s)
    if m == 0:
        raise ValueError("need at least one calibration score")
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    c = _count_at_most(alpha, m)
    return 1.0 if c >= m else float(s[c])


@dataclass
class ConformalCalibrator:
    scores: np.ndarray
    alpha: float
    delta3: float = 0.0
    threshold: float = 1.0

    @classmethod
    def fit(cls, scores, alpha, delta3=0.0):
        scores = np.sort(np.asarray(scores, dtype=np.float64))
        if np.any((scores < 0) | (scores > 1)):
            raise ValueError("scores must lie in [0, 1]")
        return cls(scores, float(alpha), float(delta3), empirical_threshold(scores, alpha))

    @property
    def m(self):
        return len(self.scores)

    def sets(self, probs) -> np.ndarray:
        return conformal_sets(probs, self.threshold, self.delta3)


def conformal_sets(probs, t: float, delta3: float = 0.0) -> np.ndarray:
    """Boolean membership matrix of ``{y : f_y(x) >= t - delta3}`` (inclusive)."""
    return np.asarray(probs) >= t - delta3


def conformal_set(prob_row, t: float, delta3: float = 0.0) -> set:
    """Conformal set of one probability vector as a set of 0-based labels."""
    return set(np.flatnonzero(conformal_sets(np.asarray(prob_row)[None, :], t, delta3)[0]).tolist())


def prune_candidates(candidates, probs, calibrator: ConformalCalibrator):
    """Intersect each candidate set with its conformal set, skipping empty intersections.

    Returns ``(new_candidates, stats)``.
    """
    s = np.asarray(candidates, dtype=bool)
    inter = s & calibrator.sets(probs)
    nonempty = inter.any(axis=1)
    new = np.where(nonempty[:, None], inter, s)
    before = s.sum(axis=1)
    after = new.sum(axis=1)
    stats = {
        "mean_size_before": float(before.mean()),
        "mean_size_after": float(after.mean()),
        "fraction_pruned": float((before - after).sum() / before.sum()),
        "empty_intersections": int((~nonempty).sum()),
        "validity": float(nonempty.mean()),
    }
    return new, stats


class ConformalCleaner:
    """Per-epoch calibration on the validation split and pruning of the training candidates."""

    name = "conf"

    def __init__(self, val: PartialDataset, cfg: CleanConfig):
        self.val = val
        self.cfg = cfg
        self.scores = None

    def start_epoch(self, epoch, model):
        self.scores = validation_scores(model, self.val)

    def error_level(self, probs, candidates):
        if self.cfg.alpha == "adaptive":
            return min(max(adaptive_alpha(probs, candidates), 0.0), ALPHA_CAP)
        return self.cfg.alpha

    def prune(self, epoch, probs, candidates):
        if epoch < self.cfg.warmup:
            return candidates, {}
        alpha = self.error_level(probs, candidates)
        cal = ConformalCalibrator.fit(self.scores, alpha, self.cfg.delta3)
        new, stats = prune_candidates(candidates, probs, cal)
        return new, {
            "alpha": alpha,
            "threshold": cal.threshold,
            "validity": stats["validity"],
            "empty_intersections": stats["empty_intersections"],
        }


class _Chain:
    def __init__(self, *cleaners):
        self.cleaners = cleaners

    def start_epoch(self, epoch, model):
        for c in self.cleaners:
            c.start_epoch(epoch, model)

    def prune(self, epoch, probs, candidates):
        info = {}
        for c in self.cleaners:
            candidates, more = c.prune(epoch, probs, candidates)
            info.update(more)
        return candidates, info


def train_conformal_clean(
    ds: PartialDataset,
    config: CleanConfig,
    seed: Optional[int] = None,
    *,
    test: Optional[PartialDataset] = None,
    dataset_name: str = "",
    callback=None,
):
    """Conformal candidate cleaning on top of a base PLL method.

    ``ds`` is split into training and calibration parts with ``config.val_frac``;
    only the training candidate sets are ever pruned.
    Returns ``(model, report)``.
    """
    if seed is not None and seed != config.seed:
        config = CleanConfig(**{**config.__dict__, "seed": seed})
    parts = split(ds, config.val_frac, config.seed)
    train, val = ds.subset(parts.train_idx), ds.subset(parts.val_idx)
    cleaner = ConformalCleaner(val, config)
    if config.base == "pop":
        cleaner = _Chain(cleaner, PopCleaner(config))
    model, report, _ = fit(
        train, config, method=f"conf-{config.base}", cleaner=cleaner,
        test=test, n_total=ds.n, dataset_name=dataset_name, callback=callback,
    )
    return model, report
