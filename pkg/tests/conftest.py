import numpy as np
import pytest

from budgetalloc.data import RctDataset
from budgetalloc.synthgen import generate_ground_truth, sample_rct


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def synth10k():
    """Featureless synthetic instance used by several modules (n=10,000, K=4)."""
    gt = generate_ground_truth(10_000, 4, seed=0)
    return gt, sample_rct(gt, seed=0)


@pytest.fixture
def tiny_rct():
    X = np.arange(12, dtype=float).reshape(6, 2)
    return RctDataset(X, [0, 1, 2, 0, 1, 2], [0, 1, 1, 0, 0, 1], [1.0, 2.0, 3.0, 1.0, 2.0, 3.0], 3)


# one PASS/FAIL line per acceptance criterion, grouped by the test-name prefix
_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if "test_acceptance" not in report.nodeid:
        return
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    name = report.nodeid.split("::")[-1]
    crit = name.split("_")[1].upper()  # test_ac3_trend -> AC3
    detail = dict(report.user_properties).get("detail", "")
    entry = _ACCEPTANCE.setdefault(crit, {"ok": True, "details": []})
    entry["ok"] &= report.outcome == "passed"
    entry["details"].append(f"{name}: {report.outcome}{' | ' + detail if detail else ''}")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(_ACCEPTANCE, key=lambda c: int(c[2:])):
        e = _ACCEPTANCE[crit]
        tr.write_line(f"{crit}: {'PASS' if e['ok'] else 'FAIL'}")
        for d in e["details"]:
            tr.write_line(f"    {d}")
