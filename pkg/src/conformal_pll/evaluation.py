"""Accuracy metrics, paired t-tests, win/tie/loss tallies and JSON report documents."""
from __future__ import annotations

import itertools
import json
import math
import os
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional

import numpy as np

# Two-sided 5% critical values of Student's t, df = 1..30.
T_CRITICAL_05 = (
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
    2.201, 2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086,
    2.080, 2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
)

TRACE_KEYS = (
    "train_acc", "test_acc", "mean_candidate_size", "retention",
    "alpha", "threshold", "validity", "empty_intersections", "pop_e",
)


class ReportError(ValueError):
    pass


def _empty_traces():
    return {key: [] for key in TRACE_KEYS}


@dataclass
class RunReport:
    method: str
    dataset: str = ""
    seed: int = 0
    traces: Dict[str, list] = field(default_factory=_empty_traces)
    final_test_acc: Optional[float] = None
    wall_time: float = 0.0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        try:
            traces = _empty_traces()
            traces.update({k: list(v) for k, v in d["traces"].items()})
            return cls(
                method=str(d["method"]),
                dataset=str(d.get("dataset", "")),
                seed=int(d["seed"]),
                traces=traces,
                final_test_acc=d.get("final_test_acc"),
                wall_time=float(d.get("wall_time", 0.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ReportError(f"malformed run report: {exc}") from None


@dataclass
class Comparison:
    method_a: str
    method_b: str
    dataset: str
    pairs: List[List[float]]
    t: Optional[float]
    significant: bool
    outcome: str

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


def accuracy(probs, labels) -> float:
    """Fraction of rows whose argmax (lowest index on ties) equals the label."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean(np.argmax(probs, axis=1) == labels))


def test_accuracy(model, ds_test) -> float:
    if ds_test.true_labels is None:
        raise ValueError("test set has no ground-truth labels")
    if ds_test.n == 0:
        raise ValueError("empty test set")
    return accuracy(model.predict_proba(ds_test.features), ds_test.true_labels)


test_accuracy.__test__ = False  # not a pytest test


def t_critical(df: int) -> float:
    if df < 1:
        raise ValueError("need at least one degree of freedom")
    # beyond the table the df=30 value is a slightly conservative stand-in
    return T_CRITICAL_05[min(df, len(T_CRITICAL_05)) - 1]


def paired_t_test(a, b, level=0.05, method_a="a", method_b="b", dataset="") -> Comparison:
    """Two-sided paired t-test on per-seed scores ``a`` and ``b`` at the 5% level."""
    if level != 0.05:
        raise ValueError("only the 5% level is tabulated")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("a and b must be equal-length 1-d sequences")
    m = len(a)
    if m < 2:
        raise ValueError("need at least two paired samples")
    d = a - b
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0.0:
        if mean == 0.0:
            t, significant = None, False
        else:
            t, significant = math.copysign(math.inf, mean), True
    else:
        t = float(mean / (sd / math.sqrt(m)))
        significant = abs(t) > t_critical(m - 1)
    if not significant:
        outcome = "tie"
    else:
        outcome = "win" if mean > 0 else "loss"
    return Comparison(method_a, method_b, dataset, [[float(x), float(y)] for x, y in zip(a, b)],
                      t, bool(significant), outcome)


def _by_seed(reports: Iterable[RunReport]):
    out = {}
    for r in reports:
        if r.final_test_acc is None:
            raise ReportError(f"{r.method}/{r.dataset} seed {r.seed}: no final test accuracy")
        out[r.seed] = 100.0 * r.final_test_acc
    return out


def compare_all(reports: Iterable[RunReport]) -> List[Comparison]:
    """Paired t-tests (on accuracy in percentage points) for every method pair on every dataset."""
    grouped = defaultdict(lambda: defaultdict(list))
    for r in reports:
        grouped[r.dataset][r.method].append(r)
    comparisons = []
    for dataset in sorted(grouped):
        methods = grouped[dataset]
        for ma, mb in itertools.combinations(sorted(methods), 2):
            sa, sb = _by_seed(methods[ma]), _by_seed(methods[mb])
            if set(sa) != set(sb):
                raise ReportError(
                    f"dataset {dataset!r}: seed sets differ between {ma} {sorted(sa)} and {mb} {sorted(sb)}"
                )
            seeds = sorted(sa)
            comparisons.append(paired_t_test([sa[s] for s in seeds], [sb[s] for s in seeds],
                                             method_a=ma, method_b=mb, dataset=dataset))
    return comparisons


def wins_ties_losses(comparisons: Iterable[Comparison]) -> Dict[str, Dict[str, int]]:
    """Per-method counts of significant wins, ties and losses against every other method."""
    tally = defaultdict(lambda: {"wins": 0, "ties": 0, "losses": 0})
    flip = {"win": "losses", "loss": "wins", "tie": "ties"}
    own = {"win": "wins", "loss": "losses", "tie": "ties"}
    for c in comparisons:
        tally[c.method_a][own[c.outcome]] += 1
        tally[c.method_b][flip[c.outcome]] += 1
    return {m: dict(v) for m, v in sorted(tally.items())}


def summary_table(reports: Iterable[RunReport]):
    """``{dataset: {method: (mean, std)}}`` of final test accuracy in percent."""
    grouped = defaultdict(lambda: defaultdict(list))
    for r in reports:
        if r.final_test_acc is not None:
            grouped[r.dataset][r.method].append(100.0 * r.final_test_acc)
    return {
        ds: {m: (float(np.mean(v)), float(np.std(v, ddof=1)) if len(v) > 1 else 0.0)
             for m, v in sorted(methods.items())}
        for ds, methods in sorted(grouped.items())
    }


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None if math.isnan(value) else ("inf" if value > 0 else "-inf")
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.generic):
        return _clean(value.item())
    return value


def _restore(value):
    if value == "inf":
        return math.inf
    if value == "-inf":
        return -math.inf
    return value


def report_document(reports, comparisons=(), tally=None) -> dict:
    doc = {
        "runs": [_clean(r.to_dict()) for r in reports],
        "comparisons": [_clean(c.to_dict()) for c in comparisons],
    }
    if tally is not None:
        doc["tally"] = tally
    return doc


def emit_report(reports, path, comparisons=(), tally=None, exclude_timing=False) -> None:
    """Write runs and comparisons as a JSON document (floats keep full precision)."""
    doc = report_document(reports, comparisons, tally)
    if exclude_timing:
        for run in doc["runs"]:
            run["wall_time"] = 0.0
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True, allow_nan=False)
        fh.write("\n")


def load_report(path):
    """Inverse of :func:`emit_report`: returns ``(runs, comparisons)``."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        runs = [RunReport.from_dict(r) for r in doc["runs"]]
        comps = []
        for c in doc.get("comparisons", []):
            c = dict(c)
            c["t"] = _restore(c.get("t"))
            comps.append(Comparison.from_dict(c))
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ReportError) as exc:
        raise ReportError(f"{os.fspath(path)}: {exc}") from None
    return runs, comps


def format_table(reports, comparisons) -> str:
    """Aligned plain-text rendering of mean +- std accuracies and the win/tie/loss tally."""
    lines = []
    table = summary_table(reports)
    methods = sorted({m for ds in table.values() for m in ds})
    if methods:
        width = max(12, *(len(m) + 2 for m in methods))
        lines.append("dataset".ljust(16) + "".join(m.rjust(width + 8) for m in methods))
        for ds, row in table.items():
            cells = []
            for m in methods:
                if m in row:
                    mean, std = row[m]
                    cells.append(f"{mean:6.2f} (+- {std:5.2f})".rjust(width + 8))
                else:
                    cells.append("-".rjust(width + 8))
            lines.append((ds or "-").ljust(16) + "".join(cells))
        lines.append("")
    tally = wins_ties_losses(comparisons)
    lines.append("method".ljust(24) + "wins".rjust(6) + "ties".rjust(6) + "losses".rjust(8))
    for m, t in tally.items():
        lines.append(m.ljust(24) + f"{t['wins']:6d}{t['ties']:6d}{t['losses']:8d}")
    return "\n".join(lines) + "\n"
