"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Long end-to-end criteria (6, 7, 9, 10) run full-size synthetic datasets and
take several minutes in total.
"""

import csv
import math
import time
import warnings

import numpy as np
import pytest

from oracles import autocorrelation, mav_loop, qp_dual, rbf_gram, transfer_magnitude, wl_loop
from semgsvm.config import DEFAULT_SEED
from semgsvm.errors import ProtocolWarning
from semgsvm.features import FeatureKind, Window, extract_features
from semgsvm.harness import (
    Part,
    SmoothingConfig,
    acquisition_features,
    assemble_plan,
    load_features,
    run_protocol,
    smooth_predictions,
)
from semgsvm.ingest import VALID_ACQUISITION_IDS, LabeledSignal, LabelTable, RawAcquisition, SignalTable
from semgsvm.preprocessing import design_butterworth_lowpass, fit_var, whiten
from semgsvm.svm import KernelParams, train_binary_svm
from semgsvm.synth import DAY_SESSIONS, SynthConfig, generate_acquisition

DRIFT_SEEDS = (101, 102, 103, 104, 105)


def test_criterion_01_substitution_documented(criterion):
    # the original recordings are private; criteria 2-10 stand in for the accuracy table
    substitutes = [name for name in globals() if name.startswith("test_criterion_") and not name.endswith("_01_substitution_documented")]
    ok = len(substitutes) == 9
    criterion(1, ok, "original accuracy table not reproducible; replaced by property criteria 2-10")
    assert ok


def test_criterion_02_feature_exactness(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    windows = [Window(rng.normal(size=(10, 10)) * rng.uniform(1e-3, 1e3), 1, 1, 10 * k) for k in range(1000)]
    m = extract_features(windows, FeatureKind.MAV).vectors
    w = extract_features(windows, FeatureKind.WL).vectors
    worst = 0.0
    for k, win in enumerate(windows):
        for c in range(10):
            ref_m, ref_w = mav_loop(win.samples[:, c]), wl_loop(win.samples[:, c])
            worst = max(worst, abs(m[k, c] - ref_m) / abs(ref_m), abs(w[k, c] - ref_w) / abs(ref_w))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and elapsed < 1.0
    criterion(2, ok, f"max relative error {worst:.2e}, {elapsed:.3f} s")
    assert ok


def test_criterion_03_filter_response(criterion):
    t0 = time.perf_counter()
    coeffs = design_butterworth_lowpass(5.0, 100.0)
    b, a = coeffs.numerator, coeffs.denominator
    h0 = transfer_magnitude(b, a, 0.0, 100.0)
    db5 = 20 * math.log10(transfer_magnitude(b, a, 5.0, 100.0))
    db40 = 20 * math.log10(transfer_magnitude(b, a, 40.0, 100.0))
    mags = [transfer_magnitude(b, a, f, 100.0) for f in range(51)]
    monotone = all(y <= x + 1e-15 for x, y in zip(mags, mags[1:]))
    elapsed = time.perf_counter() - t0
    ok = abs(h0 - 1) <= 1e-6 and abs(db5 + 3.01) <= 0.2 and db40 <= -30 and monotone and elapsed < 1.0
    criterion(3, ok, f"|H(0)|={h0:.9f}, H(5 Hz)={db5:.3f} dB, H(40 Hz)={db40:.2f} dB, monotone={monotone}, {elapsed:.3f} s")
    assert ok


def test_criterion_04_whitening(criterion):
    t0 = time.perf_counter()
    # persistent, cross-coupled VAR(2); spectral radius of the companion matrix ~0.79
    a1 = np.array([[1.2, 0.2, 0.0], [0.0, 1.0, 0.2], [0.1, 0.0, 0.8]])
    a2 = np.array([[-0.5, 0.0, 0.1], [0.1, -0.4, 0.0], [0.0, 0.1, -0.3]])
    rng = np.random.default_rng(4)
    t, burn = 10_000, 500
    x = np.zeros((t + burn, 3))
    for k in range(2, t + burn):
        x[k] = a1 @ x[k - 1] + a2 @ x[k - 2] + rng.normal(size=3)
    x = x[burn:]
    model = fit_var(x, 2)
    truth = np.stack([a1, a2])
    # relative error of the whole coefficient set (Frobenius norm over both lags)
    rel = np.linalg.norm(model.coefficient_matrices - truth) / np.linalg.norm(truth)
    n = len(x)
    res = whiten(LabeledSignal(x, np.zeros(n, np.int64), np.zeros(n, np.int64)), model).channels
    rho = max(abs(autocorrelation(res[:, c], lag)) for c in range(3) for lag in range(1, 21))
    elapsed = time.perf_counter() - t0
    ok = rel <= 0.05 and rho < 0.05 and elapsed < 10
    criterion(4, ok, f"coefficient relative error {rel:.4f}, max |rho| lags 1-20 {rho:.4f}, {elapsed:.2f} s")
    assert ok


def test_criterion_05_smo_vs_qp_oracle(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst_obj, worst_kkt = 0.0, 0.0
    for _ in range(50):
        n = int(rng.integers(2, 21))
        x = rng.normal(size=(n, int(rng.integers(1, 6))))
        y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
        y[:2] = [1.0, -1.0]
        c, g = 2.0 ** rng.integers(-3, 11), 2.0 ** rng.integers(-6, 3)
        m = train_binary_svm(x, y, c, KernelParams(g))
        _, obj = qp_dual(x, y, c, g)
        worst_obj = max(worst_obj, abs(m.dual_objective - obj) / max(abs(obj), 1e-12))
        # KKT audit from the support set with an independent Gram matrix
        alpha = np.zeros(n)
        for sv, coef in zip(m.support_vectors, m.dual_coefficients):
            alpha[np.flatnonzero(np.all(x == sv, axis=1))[0]] = coef * y[np.flatnonzero(np.all(x == sv, axis=1))[0]]
        f = rbf_gram(x, g) @ (alpha * y) + m.bias
        margin = y * f
        viol = np.zeros(n)
        at_zero, at_c = alpha <= 0, alpha >= c
        free = ~at_zero & ~at_c
        viol[at_zero] = np.maximum(0, 1 - margin[at_zero])
        viol[at_c] = np.maximum(0, margin[at_c] - 1)
        viol[free] = np.abs(margin[free] - 1)
        worst_kkt = max(worst_kkt, viol.max(), abs(alpha @ y), max(0, -alpha.min()), max(0, alpha.max() - c))
    elapsed = time.perf_counter() - t0
    ok = worst_obj <= 1e-3 and worst_kkt <= 1e-3 and elapsed < 30
    criterion(5, ok, f"max objective rel. gap {worst_obj:.2e}, max KKT violation {worst_kkt:.2e}, {elapsed:.2f} s")
    assert ok


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.mark.slow
def test_criterion_06_end_to_end_zero_drift(criterion, repro_run):
    out, code, elapsed = repro_run
    rows = [r for r in _rows(out / "accuracy.csv") if r["train_acq"] == r["test_acq"]]
    worst = {k: min(float(r["accuracy"]) for r in rows if r["feature"] == k) for k in ("MAV", "WL")}
    ok = code == 0 and len(rows) == 32 and min(worst.values()) >= 90 and elapsed < 600
    criterion(6, ok, f"lowest same-acquisition accuracy MAV {worst['MAV']:.2f}%, WL {worst['WL']:.2f}%; repro {elapsed:.0f} s")
    assert ok


def _in_memory_features(cfg: SynthConfig):
    feats = {}
    for acq in VALID_ACQUISITION_IDS:
        times, emg, labels = generate_acquisition(cfg, acq)
        raw = RawAcquisition(acq, SignalTable(times, emg), LabelTable(times, labels))
        feats[acq] = acquisition_features(raw)
    return feats


@pytest.mark.slow
def test_criterion_07_drift_pattern(criterion):
    failures, drops_log = [], []
    for seed in DRIFT_SEEDS:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ProtocolWarning)
            report = run_protocol(_in_memory_features(SynthConfig(seed=seed)), DEFAULT_SEED)
        groups = {(c.part, c.feature, c.smoothing) for c in report.cells}
        for part, feature, smoothing in sorted(groups):
            big_drops = 0
            for day, accs in DAY_SESSIONS.items():
                acc = [report.cell(part, a, feature, smoothing).accuracy for a in accs]
                if not acc[0] > max(acc[1:]):
                    failures.append(f"seed {seed} part {part} {feature} smoothing={smoothing} day {day}: {acc}")
                drops_log.append(acc[0] - acc[1])
                big_drops += acc[0] - acc[1] >= 5
            if big_drops < 3:
                failures.append(f"seed {seed} part {part} {feature} smoothing={smoothing}: only {big_drops} days drop >= 5 pp")
    ok = not failures
    detail = f"{len(DRIFT_SEEDS)} seeds x 8 cell groups; session-2 drop min {min(drops_log):.1f} pp, median {np.median(drops_log):.1f} pp"
    criterion(7, ok, detail + ("" if ok else f"; {len(failures)} violations, first: {failures[0]}"))
    assert ok, failures[:5]


def test_criterion_08_smoothing(criterion):
    rng = np.random.default_rng(8)
    cfg, identity = SmoothingConfig(True, 5), SmoothingConfig(True, 1)
    checked, all_correct = 0, True
    while checked < 200:
        n = int(rng.integers(5, 80))
        truth = np.full(n, int(rng.integers(0, 18)))
        pred = truth.copy()
        wrong = rng.random(n) < rng.uniform(0, 0.4)
        pred[wrong] = (truth[wrong] + rng.integers(1, 18, wrong.sum())) % 18
        correct = pred == truth
        # every (edge-truncated) length-5 neighbourhood holds at least 3 correct labels
        if not all(correct[max(0, i - 2) : i + 3].sum() >= 3 for i in range(n)):
            continue
        checked += 1
        all_correct &= bool(np.all(smooth_predictions(pred, cfg) == truth))
    ident = all(
        np.array_equal(smooth_predictions(s, identity), s) for s in (rng.integers(0, 18, int(rng.integers(1, 100))) for _ in range(100))
    )
    ok = all_correct and ident
    criterion(8, ok, f"{checked} qualifying streams smoothed to 100%: {all_correct}; k=1 identity on 100 streams: {ident}")
    assert ok


@pytest.mark.slow
def test_criterion_09_determinism(criterion, repro_run, zero_drift_dataset, tmp_path):
    from semgsvm.cli import main

    first, code_a, _ = repro_run
    second = tmp_path / "repro_b"
    code_b = main(["--log-level", "warning", "repro", "--data-dir", str(zero_drift_dataset), "--out-dir", str(second)])
    names = ["accuracy.csv", "report.json", "figure12.csv", "figure13.csv", "figure14.csv"]
    same = [n for n in names if (first / n).read_bytes() == (second / n).read_bytes()]
    ok = code_a == code_b == 0 and len(same) == len(names)
    criterion(9, ok, f"{len(same)}/{len(names)} report files byte-identical across two runs")
    assert ok


@pytest.mark.slow
def test_criterion_10_protocol_structure(criterion, zero_drift_dataset):
    feats = load_features(zero_drift_dataset, VALID_ACQUISITION_IDS, kinds=(FeatureKind.MAV,))
    problems = []
    audited = 0
    for day, accs in DAY_SESSIONS.items():
        per_acq = {a: feats[a][FeatureKind.MAV] for a in accs}
        # look-up tables from the unsplit feature sets
        rep = {(a, int(s)): int(r) for a in accs for s, r in zip(per_acq[a].starts, per_acq[a].repetition)}
        lab = {(a, int(s)): int(l) for a in accs for s, l in zip(per_acq[a].starts, per_acq[a].labels)}
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ProtocolWarning)
            plans = {p: assemble_plan(p, day, DEFAULT_SEED, per_acq) for p in (Part.PART1, Part.PART2)}
        for part, mp in plans.items():
            audited += 1
            train = set(mp.training.window_ids)
            val = set(mp.validation.window_ids)
            expected_val_acqs = set(accs) if part is Part.PART1 else {accs[0]}
            if {a for a, _ in val} != expected_val_acqs:
                problems.append(f"day {day} part {part}: validation acquisitions {sorted({a for a, _ in val})}")
            if train & val:
                problems.append(f"day {day} part {part}: training overlaps validation")
            if any(rep[i] != 1 or lab[i] == 0 for i in val):
                problems.append(f"day {day} part {part}: validation row that is not a first-repetition movement")
            if {a for a, _ in train} != {accs[0]}:
                problems.append(f"day {day} part {part}: training rows outside the training acquisition")
            for a, test in mp.testing.items():
                t = set(test.window_ids)
                if t & train or t & val:
                    problems.append(f"day {day} part {part} acq {a}: testing overlaps training or validation")
                if any(rep[i] == 1 and lab[i] != 0 for i in t):
                    problems.append(f"day {day} part {part} acq {a}: testing holds a first-repetition movement row")
                if a in expected_val_acqs:
                    half_b = t | {i for i in val if i[0] == a}
                    if len(half_b) != len(per_acq[a]) // 2:
                        problems.append(f"day {day} part {part} acq {a}: second half has {len(half_b)} rows")
            if len(mp.training) != math.ceil(0.10 * math.ceil(len(per_acq[accs[0]]) / 2) - 1e-9):
                problems.append(f"day {day} part {part}: training size {len(mp.training)}")
        if plans[Part.PART1].training.window_ids != plans[Part.PART2].training.window_ids:
            problems.append(f"day {day}: parts use different training sets")
        for a in accs:
            if plans[Part.PART1].testing[a].window_ids != plans[Part.PART2].testing[a].window_ids:
                problems.append(f"day {day} acq {a}: parts use different testing sets")
    ok = not problems
    criterion(10, ok, f"{audited} materialized plans audited by window identity" + ("" if ok else f"; first issue: {problems[0]}"))
    assert ok, problems[:5]
