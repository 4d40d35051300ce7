import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conformal_pll.evaluation import (
    T_CRITICAL_05,
    ReportError,
    RunReport,
    accuracy,
    compare_all,
    emit_report,
    format_table,
    load_report,
    paired_t_test,
    t_critical,
    test_accuracy as accuracy_on,
    wins_ties_losses,
)

from conftest import supervised


def run(method, seed, acc, dataset="blobs"):
    return RunReport(method=method, dataset=dataset, seed=seed, final_test_acc=acc)


def test_hand_computed_t():
    d = np.array([1.0, 2.0, 0.5, 1.5, 1.0])
    c = paired_t_test(d, np.zeros(5))
    assert c.t == pytest.approx(4.707, abs=5e-4)
    assert c.significant and c.outcome == "win"


def test_critical_table_matches_scipy():
    for df, value in enumerate(T_CRITICAL_05, start=1):
        assert value == pytest.approx(stats.t.ppf(0.975, df), abs=6e-4)
    assert t_critical(200) == T_CRITICAL_05[-1]


def test_t_agrees_with_scipy():
    rng = np.random.default_rng(0)
    a, b = rng.normal(80, 2, 7), rng.normal(79, 2, 7)
    assert paired_t_test(a, b).t == pytest.approx(stats.ttest_rel(a, b).statistic, rel=1e-12)


def test_degenerate_differences():
    assert paired_t_test([1, 2, 3], [1, 2, 3]).outcome == "tie"
    c = paired_t_test(np.full(5, 3.0), np.full(5, 1.0))
    assert c.outcome == "win" and c.t == math.inf
    assert paired_t_test(np.full(5, 1.0), np.full(5, 3.0)).outcome == "loss"


def test_t_test_rejects_bad_input():
    with pytest.raises(ValueError):
        paired_t_test([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        paired_t_test([1], [2])


@given(st.integers(0, 2**31))
@settings(max_examples=100, deadline=None)
def test_antisymmetry_and_shift_invariance(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(2, 12))
    a, b = rng.normal(70, 3, m), rng.normal(70 + rng.normal(0, 2), 3, m)
    ab, ba = paired_t_test(a, b), paired_t_test(b, a)
    swap = {"win": "loss", "loss": "win", "tie": "tie"}
    assert ba.outcome == swap[ab.outcome]
    shift = float(rng.normal(0, 10))
    assert paired_t_test(a + shift, b + shift).outcome == ab.outcome


def test_tally_examples():
    reports = [run(m, s, 0.8) for m in ("a", "b") for s in range(5)]
    tally = wins_ties_losses(compare_all(reports))
    assert tally == {"a": {"wins": 0, "ties": 1, "losses": 0}, "b": {"wins": 0, "ties": 1, "losses": 0}}


def test_tally_counts_across_datasets():
    reports = []
    for ds, delta in (("x", 0.05), ("y", 0.04), ("z", 0.0)):
        for s in range(5):
            reports.append(run("a", s, 0.8 + delta + 0.001 * s, ds))
            reports.append(run("b", s, 0.8 + 0.001 * s, ds))
    tally = wins_ties_losses(compare_all(reports))
    assert tally["a"] == {"wins": 2, "ties": 1, "losses": 0}
    assert tally["b"] == {"wins": 0, "ties": 1, "losses": 2}


def test_tally_conservation_three_methods():
    rng = np.random.default_rng(3)
    reports = [run(m, s, float(rng.uniform(0.7, 0.9)), ds)
               for ds in ("p", "q") for m in ("a", "b", "c") for s in range(5)]
    comps = compare_all(reports)
    tally = wins_ties_losses(comps)
    for row in tally.values():
        assert sum(row.values()) == 2 * 2
    assert sum(r["wins"] for r in tally.values()) == sum(r["losses"] for r in tally.values())


def test_compare_requires_matching_seeds():
    with pytest.raises(ReportError, match="seed sets differ"):
        compare_all([run("a", 0, 0.5), run("a", 1, 0.5), run("b", 0, 0.5), run("b", 2, 0.5)])


def test_accuracy_examples():
    y = np.repeat(np.arange(4), 5)
    assert accuracy(np.eye(4)[y], y) == 1.0
    assert accuracy(np.full((20, 4), 0.25), y) == 0.25
    with pytest.raises(ValueError):
        accuracy(np.zeros((0, 4)), [])


def test_accuracy_on_dataset():
    class Uniform:
        def predict_proba(self, x):
            return np.full((len(x), 4), 0.25)

    y = np.repeat(np.arange(4), 3)
    ds = supervised(np.zeros((12, 2)), y, 4)
    assert accuracy_on(Uniform(), ds) == 0.25
    with pytest.raises(ValueError):
        accuracy_on(Uniform(), ds.subset(np.array([], dtype=int)))


def test_emit_load_round_trip(tmp_path):
    r = run("conf-proden", 3, 0.123456789)
    r.traces["alpha"] = [None, 0.25]
    r.traces["test_acc"] = [0.1, 0.123456789]
    comps = [paired_t_test(np.full(5, 3.0), np.full(5, 1.0), method_a="a", method_b="b")]
    path = tmp_path / "r.json"
    emit_report([r], path, comps)
    runs, loaded = load_report(path)
    assert runs == [r]
    assert loaded == comps
    assert "0.123456789" in path.read_text(encoding="utf-8")


def test_emit_empty_document(tmp_path):
    path = tmp_path / "empty.json"
    emit_report([], path)
    assert json.loads(path.read_text(encoding="utf-8")) == {"comparisons": [], "runs": []}
    assert load_report(path) == ([], [])


def test_load_error_names_file(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(ReportError, match="broken.json"):
        load_report(path)
    path.write_text('{"runs": [{"seed": 1}]}', encoding="utf-8")
    with pytest.raises(ReportError, match="broken.json"):
        load_report(path)


def test_format_table_lists_every_method():
    reports = [run(m, s, 0.5 + 0.01 * s) for m in ("proden", "conf-proden") for s in range(5)]
    text = format_table(reports, compare_all(reports))
    assert "proden" in text and "conf-proden" in text
    assert "52.00" in text
