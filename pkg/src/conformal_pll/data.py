"""Partially labeled datasets: representation, text I/O, splitting and candidate generation.

Candidate sets are stored as an ``n x k`` boolean matrix; class indices are
0-based in memory and 1-based in the text format.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

# Sub-seed offsets derived from one master seed.
SPLIT_OFFSET = 0
INIT_OFFSET = 1
SHUFFLE_OFFSET = 2
GENERATE_OFFSET = 3
TEST_SPLIT_OFFSET = 4


def sub_rng(seed: int, offset: int) -> np.random.Generator:
    """Independent generator for one stochastic concern of a seeded run."""
    return np.random.default_rng([int(seed), int(offset)])


class DatasetError(ValueError):
    """Raised for malformed dataset files or violated dataset invariants."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class PartialDataset:
    features: np.ndarray
    candidates: np.ndarray
    true_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64)
        s = np.array(self.candidates, dtype=bool)
        if x.ndim != 2:
            raise DatasetError("features must be a 2-d array")
        if s.ndim != 2 or s.shape[0] != x.shape[0]:
            raise DatasetError("candidates must be an n x k matrix matching the features")
        if s.shape[1] < 3:
            raise DatasetError("need at least 3 classes")
        if not np.all(np.isfinite(x)):
            raise DatasetError("features contain NaN or Inf")
        empty = np.flatnonzero(~s.any(axis=1))
        if empty.size:
            raise DatasetError(f"empty candidate set for instance {empty[0]}")
        y = None
        if self.true_labels is not None:
            y = np.array(self.true_labels, dtype=np.int64)
            if y.shape != (x.shape[0],):
                raise DatasetError("true_labels must have one entry per instance")
            if np.any((y < 0) | (y >= s.shape[1])):
                raise DatasetError("true label out of range")
            missing = np.flatnonzero(~s[np.arange(len(y)), y])
            if missing.size:
                raise DatasetError(f"true label of instance {missing[0]} not in its candidate set")
            y.flags.writeable = False
        x.flags.writeable = False
        s.flags.writeable = False
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "candidates", s)
        object.__setattr__(self, "true_labels", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def k(self) -> int:
        return self.candidates.shape[1]

    def subset(self, idx) -> "PartialDataset":
        idx = np.asarray(idx)
        y = None if self.true_labels is None else self.true_labels[idx]
        return PartialDataset(self.features[idx], self.candidates[idx], y)

    def mean_candidate_size(self) -> float:
        return float(self.candidates.sum(axis=1).mean())

    def __eq__(self, other):
        if not isinstance(other, PartialDataset):
            return NotImplemented
        if (self.true_labels is None) != (other.true_labels is None):
            return False
        return (
            np.array_equal(self.features, other.features)
            and np.array_equal(self.candidates, other.candidates)
            and (self.true_labels is None or np.array_equal(self.true_labels, other.true_labels))
        )


@dataclass(frozen=True)
class SplitIndices:
    train_idx: np.ndarray
    val_idx: np.ndarray


def _parse_int(token, line, what):
    try:
        return int(token)
    except ValueError:
        raise DatasetError(f"invalid {what} {token!r}", line) from None


def load_dataset(path: Union[str, os.PathLike]) -> PartialDataset:
    """Read a dataset in the line-oriented PLL text format.

    Header ``n d k``, then one ``CANDS|TRUE|FEATURES`` record per instance.
    """
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\r\n") for ln in fh]
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise DatasetError("empty file", 1)
    header = lines[0].split()
    if len(header) != 3:
        raise DatasetError("header must be 'n d k'", 1)
    n, d, k = (_parse_int(t, 1, "header field") for t in header)
    if n < 1 or d < 1 or k < 3:
        raise DatasetError("header requires n >= 1, d >= 1, k >= 3", 1)
    if len(lines) - 1 != n:
        raise DatasetError(f"expected {n} records, found {len(lines) - 1}", len(lines))

    features = np.empty((n, d))
    candidates = np.zeros((n, k), dtype=bool)
    truth = []
    for i, raw in enumerate(lines[1:]):
        lineno = i + 2
        parts = raw.split("|")
        if len(parts) != 3:
            raise DatasetError("record must have 3 '|'-separated fields", lineno)
        cands, true_field, feats = (p.strip() for p in parts)
        if not cands:
            raise DatasetError("empty candidate set", lineno)
        for tok in cands.split(";"):
            j = _parse_int(tok.strip(), lineno, "class index")
            if not 1 <= j <= k:
                raise DatasetError(f"label {j} out of range 1..{k}", lineno)
            candidates[i, j - 1] = True
        if true_field == "?":
            truth.append(None)
        else:
            y = _parse_int(true_field, lineno, "true label")
            if not 1 <= y <= k:
                raise DatasetError(f"true label {y} out of range 1..{k}", lineno)
            if not candidates[i, y - 1]:
                members = ",".join(str(j + 1) for j in np.flatnonzero(candidates[i]))
                raise DatasetError(f"true label {y} not in candidates {{{members}}}", lineno)
            truth.append(y - 1)
        values = feats.split(",")
        if len(values) != d:
            raise DatasetError(f"expected {d} features, found {len(values)}", lineno)
        try:
            features[i] = [float(v) for v in values]
        except ValueError:
            raise DatasetError("invalid feature value", lineno) from None
        if not np.all(np.isfinite(features[i])):
            raise DatasetError("non-finite feature value", lineno)

    known = [t is not None for t in truth]
    if all(known):
        true_labels = np.array(truth, dtype=np.int64)
    elif not any(known):
        true_labels = None
    else:
        raise DatasetError("true labels must be all known or all '?'")
    return PartialDataset(features, candidates, true_labels)


def save_dataset(ds: PartialDataset, path: Union[str, os.PathLike]) -> None:
    # repr() gives the shortest decimal that round-trips exactly
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{ds.n} {ds.d} {ds.k}\n")
        for i in range(ds.n):
            cands = ";".join(str(j + 1) for j in np.flatnonzero(ds.candidates[i]))
            true = "?" if ds.true_labels is None else str(int(ds.true_labels[i]) + 1)
            feats = ",".join(repr(float(v)) for v in ds.features[i])
            fh.write(f"{cands}|{true}|{feats}\n")


def split(ds: PartialDataset, val_frac: float = 0.2, seed: int = 0, offset: int = SPLIT_OFFSET) -> SplitIndices:
    """Random train/validation partition; ``round(val_frac * n)`` instances are held out."""
    if not 0.0 < val_frac < 1.0:
        raise ValueError("val_frac must lie in (0, 1)")
    n = ds.n if isinstance(ds, PartialDataset) else int(ds)
    if n < 5:
        raise DatasetError(f"need at least 5 instances to split, got {n}")
    n_val = int(round(val_frac * n))
    if n_val < 1 or n_val >= n:
        raise DatasetError(f"val_frac={val_frac} leaves an empty split for n={n}")
    perm = sub_rng(seed, offset).permutation(n)
    return SplitIndices(train_idx=np.sort(perm[n_val:]), val_idx=np.sort(perm[:n_val]))


def holdout_test(ds: PartialDataset, test_frac: float = 0.2, seed: int = 0):
    """Seeded ``(rest, test)`` partition for datasets shipped without a separate test file."""
    if ds.true_labels is None:
        raise DatasetError("a held-out test split needs ground-truth labels")
    parts = split(ds, test_frac, seed, offset=TEST_SPLIT_OFFSET)
    return ds.subset(parts.train_idx), ds.subset(parts.val_idx)


def _check_labels(true_labels, k):
    y = np.asarray(true_labels, dtype=np.int64)
    if y.ndim != 1:
        raise ValueError("true_labels must be 1-d")
    if np.any((y < 0) | (y >= k)):
        raise ValueError(f"true labels must lie in 0..{k - 1}")
    return y


def generate_uniform(features, true_labels, q: float, seed: int = 0, k: Optional[int] = None) -> PartialDataset:
    """Add each incorrect label independently with constant probability ``q``."""
    if not 0.0 <= q < 1.0:
        raise ValueError("q must lie in [0, 1)")
    y = np.asarray(true_labels, dtype=np.int64)
    k = int(y.max()) + 1 if k is None else k
    y = _check_labels(y, k)
    rng = sub_rng(seed, GENERATE_OFFSET)
    cands = rng.random((len(y), k)) < q
    cands[np.arange(len(y)), y] = True
    return PartialDataset(features, cands, y)


def flip_probabilities(probs: np.ndarray, true_labels: np.ndarray) -> np.ndarray:
    """Per-label inclusion probabilities ``g_j(x) / max_{j' != y} g_j'(x)``.

    Every incorrect label attaining the maximum gets probability 1; if all
    incorrect labels have zero mass they all tie and all get 1. The true label
    gets 1.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError("proxy output must be an n x k matrix")
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("proxy output rows must be probability vectors")
    y = _check_labels(true_labels, p.shape[1])
    rows = np.arange(len(y))
    incorrect = p.copy()
    incorrect[rows, y] = -np.inf
    top = incorrect.max(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        xi = np.where(top > 0, p / np.where(top > 0, top, 1.0), 1.0)
    xi = np.minimum(xi, 1.0)
    xi[rows, y] = 1.0
    return xi


def generate_instance_dependent(
    features,
    true_labels,
    proxy: Union[np.ndarray, Callable, object],
    seed: int = 0,
) -> PartialDataset:
    """Instance-dependent candidates driven by a supervised proxy classifier.

    ``proxy`` is either a precomputed ``n x k`` probability matrix, an object
    with ``predict_proba`` or a callable mapping features to probabilities.
    """
    x = np.asarray(features, dtype=np.float64)
    if isinstance(proxy, np.ndarray):
        probs = proxy
    elif hasattr(proxy, "predict_proba"):
        probs = proxy.predict_proba(x)
    else:
        probs = proxy(x)
    xi = flip_probabilities(probs, true_labels)
    rng = sub_rng(seed, GENERATE_OFFSET)
    cands = rng.random(xi.shape) < xi
    y = np.asarray(true_labels, dtype=np.int64)
    cands[np.arange(len(y)), y] = True
    return PartialDataset(x, cands, y)


def make_synthetic_blobs(n: int, d: int, k: int, spread: float = 5.0, seed: int = 0):
    """Gaussian clusters with unit-variance noise around random unit-norm centers scaled by ``spread``.

    Returns ``(features, labels)``; labels are balanced up to one instance and
    randomly ordered.
    """
    if n < k or d < 2 or k < 1:
        raise ValueError("need n >= k and d >= 2")
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((k, d))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    centers *= spread
    labels = rng.permutation(np.arange(n) % k)
    features = centers[labels] + rng.standard_normal((n, d))
    return features, labels.astype(np.int64)


def blob_centers(d: int, k: int, spread: float, seed: int) -> np.ndarray:
    """The centers used by :func:`make_synthetic_blobs` for the same arguments."""
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((k, d))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    return centers * spread
