import numpy as np
import pytest

from conformal_pll import PartialDataset, generate_uniform, make_synthetic_blobs


def supervised(features, labels, k):
    labels = np.asarray(labels)
    return PartialDataset(features, np.eye(k, dtype=bool)[labels], labels)


def blob_task(n=2000, n_test=1000, d=10, k=5, spread=3.0, q=0.5, seed=0):
    """PLL training set with uniform candidate noise plus a supervised test set from the same blobs."""
    x, y = make_synthetic_blobs(n + n_test, d, k, spread, seed=100 + seed)
    ds = generate_uniform(x[:n], y[:n], q, seed=seed, k=k)
    return ds, supervised(x[n:], y[n:], k)


@pytest.fixture(scope="session")
def small_task():
    return blob_task(n=300, n_test=200, d=5, k=3, spread=5.0, q=0.5)


ACCEPTANCE = []


def record(criterion, ok, detail):
    status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
    line = f"[{status}] criterion {criterion}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
