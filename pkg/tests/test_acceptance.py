"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 7, 9 and 11 share one run of the comparison pipeline (session
fixture); criterion 11 runs it a second time and compares bytes.
"""

import csv
import math
import time

import numpy as np
import pytest

from fairdistill.cli import main as cli_main
from fairdistill.data import LabeledDataset, pair_quotas, stratified_batches
from fairdistill.experiments import ExperimentConfig, run_comparison, run_skew_sweep
from fairdistill.fairness import deo_metrics, deo_report
from fairdistill.kernels import MmdConfig, mmd2_biased
from fairdistill.report import METRICS
from fairdistill.verify import grad_battery, run_lemma_trials

from table_fixture import ROWS, TEACHER

METRIC_FILES = ("metrics.csv", "summary.csv", "results.json", "report.csv", "report.txt")


@pytest.fixture(scope="session")
def comparison(tmp_path_factory):
    out = tmp_path_factory.mktemp("comparison")
    start = time.perf_counter()
    result = run_comparison(ExperimentConfig(), out)
    return result, out, time.perf_counter() - start


@pytest.fixture(scope="session")
def lemma_report():
    start = time.perf_counter()
    rep = run_lemma_trials(1000, seed=0, mmd=MmdConfig.fixed(1.0))
    return rep, time.perf_counter() - start


def test_c01_lemma1(lemma_report, criterion):
    rep, seconds = lemma_report
    s = rep["lemma1"]
    ok = (s["trials"] == 1000 and s["violations"] == 0 and s["min_slack"] >= -1e-9
          and s["max_oracle_abs_diff"] <= 1e-10 and seconds < 30)
    criterion("C1 lemma 1 trials", ok,
              f"min slack {s['min_slack']:.3e}, violations {s['violations']}, "
              f"oracle diff {s['max_oracle_abs_diff']:.1e}, {seconds:.1f}s (both lemmas)")
    assert ok


def test_c02_lemma2(lemma_report, criterion):
    rep, seconds = lemma_report
    s = rep["lemma2"]
    ok = (s["trials"] == 1000 and s["violations"] == 0 and s["min_slack"] >= -1e-9
          and s["equality_max_abs_slack"] <= 1e-9 and seconds < 30)
    criterion("C2 lemma 2 trials", ok,
              f"min slack {s['min_slack']:.3e}, violations {s['violations']}, "
              f"equality |slack| {s['equality_max_abs_slack']:.1e}, {seconds:.1f}s")
    assert ok


def test_c03_gradient_battery(criterion):
    start = time.perf_counter()
    rep = grad_battery(n_instances=20, seed=0)
    seconds = time.perf_counter() - start
    worst = max(c["max_rel_err"] for c in rep["checks"])
    has_mfd_f = any(c["name"].startswith("objective[MFD-F") and c["passed"] for c in rep["checks"])
    ok = rep["passed"] and has_mfd_f and all(c["instances"] >= 20 for c in rep["checks"]) and seconds < 120
    criterion("C3 gradient battery", ok,
              f"{len(rep['checks'])} checks, worst rel. err {worst:.1e}, {seconds:.1f}s")
    assert ok, [c for c in rep["checks"] if not c["passed"]]


def _brute_deo(preds, labels, groups, n_classes, n_groups):
    gaps = []
    for y in range(n_classes):
        accs = []
        for a in range(n_groups):
            idx = [i for i in range(len(labels)) if labels[i] == y and groups[i] == a]
            if idx:
                accs.append(sum(1 for i in idx if preds[i] == y) / len(idx))
        gaps.append(max((abs(u - v) for u in accs for v in accs), default=0.0))
    return max(gaps), math.fsum(gaps) / n_classes, gaps


def test_c04_deo_oracle(criterion):
    rng = np.random.default_rng(4)
    mismatches = 0
    for _ in range(10_000):
        m = int(rng.integers(2, 5))
        g = int(rng.integers(1, 4))
        n = int(rng.integers(1, 25))
        labels = rng.integers(0, m, n)
        groups = rng.integers(0, g, n)
        preds = np.where(rng.random(n) < 0.6, labels, rng.integers(0, m, n))
        rep = deo_report(preds, labels, groups, m, g)
        dm, da, gaps = _brute_deo(preds.tolist(), labels.tolist(), groups.tolist(), m, g)
        if rep.deo_m != dm or rep.deo_a != da or rep.gaps.tolist() != gaps:
            mismatches += 1
    hand = deo_report(*_hand_case(), 2, 2)
    direct = deo_metrics(np.array([[1.0, 0.8], [0.5, 0.8]]), np.ones((2, 2), dtype=int))
    hand_ok = hand.deo_m == direct.deo_m == 0.5 and hand.deo_a == direct.deo_a == 0.25
    ok = mismatches == 0 and hand_ok
    criterion("C4 DEO oracle equivalence", ok,
              f"{mismatches} mismatches over 10000 instances; hand case DEO_M={hand.deo_m}, DEO_A={hand.deo_a}")
    assert ok


def _hand_case():
    # per-cell accuracies [[1.0, 0.8], [0.5, 0.8]] with 10 samples per cell
    preds, labels, groups = [], [], []
    for a, accs in enumerate([[1.0, 0.8], [0.5, 0.8]]):
        for y, acc in enumerate(accs):
            k = round(10 * acc)
            preds += [y] * k + [1 - y] * (10 - k)
            labels += [y] * 10
            groups += [a] * 10
    return np.array(preds), np.array(labels), np.array(groups)


def test_c05_estimator_contracts(criterion):
    rng = np.random.default_rng(5)
    worst_neg = worst_asym = worst_self = 0.0
    for _ in range(10_000):
        d = int(rng.integers(1, 5))
        x = rng.normal(size=(int(rng.integers(1, 7)), d)) * rng.uniform(0.1, 3)
        y = rng.normal(size=(int(rng.integers(1, 7)), d)) + rng.normal(size=d)
        s2 = float(rng.uniform(0.05, 5.0))
        xy = mmd2_biased(x, y, s2).item()
        yx = mmd2_biased(y, x, s2).item()
        xx = mmd2_biased(x, x.copy(), s2).item()
        worst_neg = min(worst_neg, xy, yx)
        worst_asym = max(worst_asym, abs(xy - yx))
        worst_self = max(worst_self, abs(xx))
    ok = worst_neg >= -1e-12 and worst_asym <= 1e-12 and worst_self <= 1e-12
    criterion("C5 estimator contracts", ok,
              f"min value {worst_neg:.1e}, max asymmetry {worst_asym:.1e}, max self-MMD {worst_self:.1e}")
    assert ok


def _quota_rule(n_groups, n_classes, batch):
    pairs = sorted((a, y) for a in range(n_groups) for y in range(n_classes))
    base, rem = batch // len(pairs), batch % len(pairs)
    return {p: base + (i < rem) for i, p in enumerate(pairs)}


def test_c06_sampler_contract(criterion):
    rng = np.random.default_rng(6)
    n_batches = bad = 0
    while n_batches < 10_000:
        g = int(rng.integers(1, 4))
        m = int(rng.integers(1, 11))
        bs = int(rng.integers(1, 300))
        counts = rng.integers(1, 30, size=(g, m))
        a = np.repeat(np.repeat(np.arange(g), m), counts.ravel())
        y = np.repeat(np.tile(np.arange(m), g), counts.ravel())
        ds = LabeledDataset(np.zeros((len(y), 1)), y, a, m, g)
        expected = _quota_rule(g, m, bs)
        for batch in stratified_batches(ds, bs, seed=int(rng.integers(1 << 30)))[:40]:
            got = np.zeros((g, m), dtype=int)
            np.add.at(got, (ds.a[batch], ds.y[batch]), 1)
            spread = got.max() - got.min()
            if spread > 1 or any(got[p] != q for p, q in expected.items()):
                bad += 1
            n_batches += 1
    q = pair_quotas(2, 10, 128)
    example = sorted(q.values()).count(7) == 8 and sorted(q.values()).count(6) == 12
    ok = bad == 0 and example
    criterion("C6 sampler contract", ok,
              f"{bad} bad batches of {n_batches}; batch 128 over 20 pairs -> "
              f"{sorted(q.values()).count(7)}x7 + {sorted(q.values()).count(6)}x6")
    assert ok


def _mean(result, tag, metric):
    return result.summaries[tag].mean(metric)


def test_c07_end_to_end(comparison, criterion):
    result, _, seconds = comparison
    t_deo = _mean(result, "teacher", "deo_m")
    t_acc = _mean(result, "teacher", "overall_acc")
    s_deo = _mean(result, "MFD", "deo_m")
    s_acc = _mean(result, "MFD", "overall_acc")
    ok = t_deo >= 0.10 and s_deo <= 0.5 * t_deo and s_acc >= t_acc - 0.01 and seconds < 600
    criterion("C7 end-to-end reproduction", ok,
              f"teacher DEO_M {100 * t_deo:.2f} acc {100 * t_acc:.2f}; MFD (lambda={result.chosen_lambda:g}) "
              f"DEO_M {100 * s_deo:.2f} acc {100 * s_acc:.2f}; pipeline {seconds:.0f}s")
    assert ok


def test_c08_skew_sweep(tmp_path, criterion):
    start = time.perf_counter()
    result = run_skew_sweep(ExperimentConfig(), tmp_path)
    seconds = time.perf_counter() - start
    st = result.stats()
    with open(tmp_path / "sweep.csv") as fh:
        n_rows = sum(1 for _ in csv.DictReader(fh))
    ok = (st["teacher_spearman"] > 0.7 and st["student_deo_m_range"] <= 0.5 * st["teacher_deo_m_range"]
          and n_rows == 6 * 2 * 4 and seconds < 1800)
    criterion("C8 skew sweep", ok,
              f"teacher Spearman {st['teacher_spearman']:.3f}; DEO_M range teacher "
              f"{100 * st['teacher_deo_m_range']:.2f} vs student {100 * st['student_deo_m_range']:.2f}; "
              f"{seconds:.0f}s")
    assert ok


def test_c09_ablation_ordering(comparison, criterion):
    result, _, _ = comparison
    t_acc = _mean(result, "teacher", "overall_acc")
    t_deo = _mean(result, "teacher", "deo_m")
    k_acc = _mean(result, "MFD-K", "overall_acc")
    k_deo = _mean(result, "MFD-K", "deo_m")
    f_deo = _mean(result, "MFD-F", "deo_m")
    m_deo = _mean(result, "MFD", "deo_m")
    checks = {
        "MFD-K acc > teacher": k_acc > t_acc,
        "MFD-K DEO_M within 20%": abs(k_deo - t_deo) <= 0.2 * t_deo,
        "MFD-F DEO_M < teacher": f_deo < t_deo,
        "MFD DEO_M <= min(MFD-K, teacher)": m_deo <= min(k_deo, t_deo),
    }
    ok = all(checks.values())
    criterion("C9 ablation ordering", ok,
              f"acc teacher {100 * t_acc:.2f} / MFD-K {100 * k_acc:.2f}; DEO_M teacher {100 * t_deo:.2f}, "
              f"MFD-K {100 * k_deo:.2f}, MFD-F {100 * f_deo:.2f}, MFD {100 * m_deo:.2f}"
              + "".join(f"; failed: {k}" for k, v in checks.items() if not v))
    assert ok


def test_c10_report_arithmetic(tmp_path, criterion, capsys):
    path = tmp_path / "table.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "n_seeds", "acc_mean", "deo_a_mean", "deo_m_mean"])
        w.writerow(["teacher", 4] + [repr(v / 100) for v in TEACHER])
        for name, cells in ROWS.items():
            w.writerow([name, 4] + [repr(c[0] / 100) for c in cells])
    code = cli_main(["report", str(path), "--out", str(tmp_path / "out"), "--no-figures"])
    with open(tmp_path / "out" / "report.csv") as fh:
        recs = {r["method"]: r for r in csv.DictReader(fh)}
    mismatches = []
    for name, cells in ROWS.items():
        for metric, (value, pct, direction) in zip(METRICS, cells):
            change = float(recs[name][f"{metric}_rel_change"])
            sign = "↑" if change > 0 else "↓"
            if abs(change) != pct or sign != direction or float(recs[name][f"{metric}_mean"]) != value:
                mismatches.append(f"{name}/{metric}: {change} vs {pct} {direction}")
    teacher_zero = all(float(recs["teacher"][f"{m}_rel_change"]) == 0.0 for m in METRICS)
    ok = code == 0 and not mismatches and teacher_zero and len(recs) == 12
    criterion("C10 report arithmetic", ok,
              f"{3 * len(ROWS) - len(mismatches)}/{3 * len(ROWS)} printed percentages reproduced over "
              f"{len(recs)} rows" + (f"; {mismatches}" if mismatches else ""))
    assert ok


def test_c11_determinism(comparison, tmp_path, criterion):
    _, first, _ = comparison
    run_comparison(ExperimentConfig(), tmp_path)
    differing = [f for f in METRIC_FILES if (first / f).read_bytes() != (tmp_path / f).read_bytes()]
    ok = not differing
    criterion("C11 determinism", ok,
              f"{len(METRIC_FILES) - len(differing)}/{len(METRIC_FILES)} metrics files byte-identical"
              + (f"; differing: {differing}" if differing else ""))
    assert ok
