"""Label-weight bookkeeping and the base PLL training loops (Proden-style reweighting, Pop pruning)."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import INIT_OFFSET, SHUFFLE_OFFSET, PartialDataset, sub_rng
from .evaluation import RunReport, accuracy
from .model import Adam, MlpModel, OneCycleSchedule, onecycle_lr, train_step

SMALL_DATASET = 5000


def default_batch_size(n: int) -> int:
    return 16 if n < SMALL_DATASET else 256


@dataclass
class TrainConfig:
    epochs: int = 200
    warmup: int = 10
    batch_size: Optional[int] = None  # None: 16 below 5000 instances, else 256
    lr: float = 1e-3
    hidden: tuple = (300, 300, 300)
    batch_norm: bool = True
    seed: int = 0
    pop_e0: float = 0.001
    pop_e_end: float = 0.04
    pop_e_step: float = 0.001

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if not 1 <= self.warmup <= self.epochs:
            raise ValueError("warmup must lie in [1, epochs]")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")


def init_weights(candidates) -> np.ndarray:
    """Uniform weights over each candidate set."""
    s = np.asarray(candidates, dtype=bool)
    sizes = s.sum(axis=1, keepdims=True)
    if np.any(sizes == 0):
        raise ValueError("candidate sets must be nonempty")
    return s / sizes


def update_weights(probs, candidates) -> np.ndarray:
    """Model probabilities restricted to the candidate set and renormalized.

    Rows whose candidate mass falls below 1e-12 fall back to uniform weights.
    """
    s = np.asarray(candidates, dtype=bool)
    masked = np.where(s, probs, 0.0)
    mass = masked.sum(axis=1, keepdims=True)
    degenerate = mass[:, 0] < 1e-12
    w = masked / np.where(degenerate[:, None], 1.0, mass)
    if degenerate.any():
        w[degenerate] = init_weights(s[degenerate])
    return w


def top2_candidates(probs, candidates):
    """Indices of the most and second-most likely candidate labels (lowest index wins ties).

    The second index is -1 for singleton candidate sets.
    """
    s = np.asarray(candidates, dtype=bool)
    masked = np.where(s, probs, -np.inf)
    first = masked.argmax(axis=1)
    rows = np.arange(len(s))
    masked[rows, first] = -np.inf
    second = masked.argmax(axis=1)
    second[~np.isfinite(masked[rows, second])] = -1
    return first, second


def pop_prune(probs, candidates, e: float) -> np.ndarray:
    """Level-set candidate elimination.

    Instances whose top-2 candidate margin ``f_top - f_second`` is at least
    ``e`` drop every candidate with probability below ``e / 2``; the top
    candidate is always kept, so no set empties.
    """
    if e <= 0:
        raise ValueError("e must be positive")
    p = np.asarray(probs, dtype=np.float64)
    s = np.array(candidates, dtype=bool)
    first, second = top2_candidates(p, s)
    rows = np.arange(len(s))
    has_second = second >= 0
    margin = np.where(has_second, p[rows, first] - p[rows, np.maximum(second, 0)], 0.0)
    inside = has_second & (margin >= e)
    drop = inside[:, None] & s & (p < e / 2)
    drop[rows, first] = False
    s[drop] = False
    return s


def pop_level(cfg: TrainConfig, pruning_round: int) -> float:
    """Margin threshold for the given 0-based pruning round, stepped from e0 and capped at e_end."""
    return min(cfg.pop_e0 + pruning_round * cfg.pop_e_step, cfg.pop_e_end)


class PopCleaner:
    """Applies :func:`pop_prune` once per epoch after the warm-up epochs."""

    name = "pop"

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.rounds = 0

    def start_epoch(self, epoch, model):
        pass

    def prune(self, epoch, probs, candidates):
        if epoch < self.cfg.warmup:
            return candidates, {}
        e = pop_level(self.cfg, self.rounds)
        self.rounds += 1
        return pop_prune(probs, candidates, e), {"pop_e": e}


def _epoch_batches(n, batch_size, rng):
    perm = rng.permutation(n)
    batches = [perm[i : i + batch_size] for i in range(0, n, batch_size)]
    # a trailing singleton cannot be batch-normalized; fold it into the previous batch
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = np.concatenate(batches[-2:])
        batches.pop()
    return batches


def fit(
    train: PartialDataset,
    cfg: TrainConfig,
    *,
    method: str = "proden",
    cleaner=None,
    test: Optional[PartialDataset] = None,
    n_total: Optional[int] = None,
    dataset_name: str = "",
    callback=None,
):
    """Alternate mini-batch ERM on the weighted log-loss with a full-pass weight update.

    Each epoch: ``cleaner.start_epoch`` (if any), one pass of Adam steps over
    shuffled mini-batches, a full eval-mode pass over the training set,
    ``cleaner.prune`` (if any) and finally the label-weight update.
    ``callback(epoch, candidates, info)`` observes the candidate sets after
    each epoch's pruning.

    Returns ``(model, report, candidates)`` with the final candidate sets.
    """
    started = time.perf_counter()
    x = train.features
    cands = np.array(train.candidates, dtype=bool)
    n = train.n
    batch_size = cfg.batch_size or default_batch_size(n if n_total is None else n_total)
    model = MlpModel(train.d, train.k, cfg.hidden, cfg.batch_norm, rng=sub_rng(cfg.seed, INIT_OFFSET))
    shuffle_rng = sub_rng(cfg.seed, SHUFFLE_OFFSET)
    opt = Adam(lr=cfg.lr)
    steps_per_epoch = len(_epoch_batches(n, batch_size, np.random.default_rng(0)))
    sched = OneCycleSchedule(total_steps=cfg.epochs * steps_per_epoch, peak_lr=cfg.lr)
    weights = init_weights(cands)
    report = RunReport(method=method, dataset=dataset_name, seed=cfg.seed)
    step = 0
    for epoch in range(cfg.epochs):
        if cleaner is not None:
            cleaner.start_epoch(epoch, model)
        model.train()
        for idx in _epoch_batches(n, batch_size, shuffle_rng):
            train_step(model, x[idx], weights[idx], opt, onecycle_lr(sched, step))
            step += 1
        model.eval()
        probs = model.predict_proba(x)
        info = {}
        if cleaner is not None:
            new_cands, info = cleaner.prune(epoch, probs, cands)
            if np.any(new_cands & ~cands) or not new_cands.any(axis=1).all():
                raise AssertionError("pruning must shrink candidate sets without emptying them")
            cands = new_cands
        if callback is not None:
            callback(epoch, cands.copy(), info)
        weights = update_weights(probs, cands)

        report.traces["train_acc"].append(
            accuracy(probs, train.true_labels) if train.true_labels is not None else None
        )
        report.traces["test_acc"].append(
            accuracy(model.predict_proba(test.features), test.true_labels) if test is not None else None
        )
        report.traces["mean_candidate_size"].append(float(cands.sum(axis=1).mean()))
        report.traces["retention"].append(
            float(cands[np.arange(n), train.true_labels].mean()) if train.true_labels is not None else None
        )
        for key in ("alpha", "threshold", "validity", "empty_intersections", "pop_e"):
            report.traces.setdefault(key, [])
            report.traces[key].append(info.get(key))
    report.final_test_acc = report.traces["test_acc"][-1]
    report.wall_time = time.perf_counter() - started
    return model, report, cands


def train_proden(ds_train: PartialDataset, config: TrainConfig, *, test=None, n_total=None, dataset_name=""):
    """Minimum-loss reweighting without any candidate pruning."""
    model, report, _ = fit(ds_train, config, method="proden", test=test, n_total=n_total, dataset_name=dataset_name)
    return model, report


def train_pop(ds_train: PartialDataset, config: TrainConfig, *, test=None, n_total=None, dataset_name=""):
    """Proden-style training plus level-set pruning after the warm-up epochs."""
    model, report, _ = fit(
        ds_train, config, method="pop", cleaner=PopCleaner(config),
        test=test, n_total=n_total, dataset_name=dataset_name,
    )
    return model, report


def fit_supervised(features, labels, k=None, epochs=50, seed=0, **kwargs) -> MlpModel:
    """Train the MLP with one-hot targets; used as the proxy for instance-dependent candidates."""
    y = np.asarray(labels, dtype=np.int64)
    k = int(y.max()) + 1 if k is None else k
    cands = np.zeros((len(y), k), dtype=bool)
    cands[np.arange(len(y)), y] = True
    ds = PartialDataset(features, cands, y)
    cfg = TrainConfig(epochs=epochs, warmup=1, seed=seed, **kwargs)
    model, _ = train_proden(ds, cfg)
    return model
