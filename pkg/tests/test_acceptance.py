"""Acceptance gate: one test (and one pass/fail line) per criterion.

Each criterion prints an ``ACCEPTANCE nn PASS/FAIL`` line with the measured
quantities, then asserts. Fixtures and tolerances are pinned; statistical
criteria use fixed seeds throughout.
"""

import json
import os
import time

import numpy as np
import pytest

from randtrees import random_ensemble
from test_calibrators import isotonic_oracle
from test_metrics import brute_auc

from clustercal.calibrators import FitData, fit, pav
from clustercal.cli import main as cli_main
from clustercal.data import Dataset, SyntheticSpec, gen_synthetic_full, load_csv, split
from clustercal.ensemble import improved_sample_fraction, train_clustered
from clustercal.gbt import GBTParams, fit_gbt
from clustercal.harness import ExperimentConfig, paired_resample_test, run_experiment
from clustercal.metrics import ada_ece, auc, cece, ece, mce, rejection_curve
from clustercal.representation import EmbeddingMatrix, assign, fit_kmeans
from clustercal.scores import ScoreSet
from clustercal.treeshap import brute_force_shap, shap_values

ADULT_CSV = os.path.join(os.path.dirname(__file__), "..", "data", "adult.csv")

# Heterogeneous three-subpopulation fixture: opposite miscalibration signs.
HET3 = dict(n_subpops=3, samples_per_subpop=500, d=2,
            base_rates=(0.2, 0.5, 0.8), miscal_offsets=(2.0, -2.0, 1.0), noise=1.0)


def verdict(n, ok, detail):
    print(f"ACCEPTANCE {n:02d} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"criterion {n}: {detail}"


def het_pipeline(seed, method, spec_kwargs=None, k=3):
    """Synthetic run: split, cluster on train+cal, calibrate on cal, score test."""
    spec = SyntheticSpec(**{**HET3, **(spec_kwargs or {}), "seed": seed})
    ds, margins, _ = gen_synthetic_full(spec)
    sp = split(ds, (0.6, 0.2, 0.2), seed)
    scores = ScoreSet.from_margins(margins)
    E = ds.features
    fit_idx = np.sort(np.concatenate([sp.train, sp.calibration]))
    cm = fit_kmeans(EmbeddingMatrix("raw", E[fit_idx]), k, seed)
    cal_s, te_s = scores.take(sp.calibration), scores.take(sp.test)
    y_cal, y_te = ds.labels[sp.calibration], ds.labels[sp.test]
    ccl = train_clustered(cal_s, E[sp.calibration], cm, method, y_cal)
    uni = ccl.fallback  # fitted on the full calibration split
    p_ccl, te_clusters = ccl.infer(te_s, E[sp.test])
    p_uni = uni.apply(te_s)
    return dict(ccl=ccl, uni=uni, cm=cm, te_clusters=te_clusters,
                p_ccl=p_ccl, p_uni=p_uni, y_te=y_te, te_s=te_s,
                cal_s=cal_s, y_cal=y_cal, cal_E=E[sp.calibration], te_E=E[sp.test])


def test_criterion_01_metric_oracles():
    t0 = time.perf_counter()
    p = np.array([0.2, 0.3, 0.7, 0.9])
    y = np.array([0, 1, 1, 1])
    vals = (ece(p, y, 2)[0], mce(p, y, 2)[0], ada_ece(p, y, 2)[0],
            cece(p, y, np.array([0, 0, 1, 1]))[0],
            auc(p, np.array([0, 1, 0, 1]))[0])  # AUC fixture: alternating labels
    # the AdaECE reference 0.226385 is the closed form rounded to 6 places
    exact = (0.225, 0.25, float(np.sqrt((2 * 0.25**2 + 2 * 0.2**2) / 4)), 0.225, 0.75)
    rounded = (0.225, 0.25, 0.226385, 0.225, 0.75)
    exact_err = max(abs(a - b) for a, b in zip(vals, exact))
    rounded_err = max(abs(a - b) for a, b in zip(vals, rounded))

    rng = np.random.default_rng(0)
    auc_err = 0.0
    for _ in range(100):
        n = int(rng.integers(10, 201))
        s = np.round(rng.uniform(size=n), 2)  # coarse grid to force ties
        yy = rng.integers(0, 2, size=n)
        if yy.min() == yy.max():
            yy[0] = 1 - yy[0]
        auc_err = max(auc_err, abs(auc(s, yy)[0] - brute_auc(s, yy)))
    dt = time.perf_counter() - t0
    ok = exact_err <= 1e-9 and rounded_err <= 5e-7 and auc_err <= 1e-12 and dt < 1.0
    verdict(1, ok, f"hand-fixture err {exact_err:.2e} (vs rounded refs {rounded_err:.2e}), "
                   f"AUC brute-force err {auc_err:.2e}, {dt:.2f}s")


def test_criterion_02_treeshap_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    max_err = 0.0
    for _ in range(100):
        ens = random_ensemble(rng, n_trees=1, n_features=4, max_depth=3)
        X = rng.normal(size=(2, 4))
        phi, base = shap_values(ens, X, use_numba=False)
        phi_b, _ = brute_force_shap(ens, X)
        max_err = max(max_err, float(np.abs(phi - phi_b).max()))

    # local accuracy on a fitted pipeline model
    spec = SyntheticSpec(**HET3, seed=0)
    ds, _, _ = gen_synthetic_full(spec)
    ens = fit_gbt(ds, GBTParams(n_trees=15, max_depth=4))
    phi, base = shap_values(ens, ds.features)
    local_err = float(np.abs(phi.sum(axis=1) + base - ens.margins(ds.features)).max())
    dt = time.perf_counter() - t0
    ok = max_err <= 1e-9 and local_err <= 1e-9 and dt < 30.0
    verdict(2, ok, f"100 random trees max err {max_err:.2e}, "
                   f"local accuracy err {local_err:.2e}, {dt:.1f}s")


def test_criterion_03_pav_isotonic():
    rng = np.random.default_rng(2)
    mono_ok = True
    for _ in range(1000):
        out = pav(rng.uniform(size=int(rng.integers(1, 40))))
        mono_ok &= bool((np.diff(out) >= -1e-12).all())
    hand = pav([1.0, 0.0, 1.0])
    hand_ok = np.allclose(hand, [0.5, 0.5, 1.0], atol=1e-12)
    oracle_err = 0.0
    for _ in range(50):
        v = rng.uniform(size=int(rng.integers(2, 9)))
        oracle_err = max(oracle_err, float(np.abs(pav(v) - isotonic_oracle(v)).max()))
    ok = mono_ok and hand_ok and oracle_err <= 1e-9
    verdict(3, ok, f"monotone on 1000 instances: {mono_ok}, hand example: {hand_ok}, "
                   f"exhaustive-oracle err {oracle_err:.2e}")


def test_criterion_04_per_cluster_nll_bound():
    t0 = time.perf_counter()
    violations, checked = 0, 0
    for seed in range(20):
        for method in ("platt", "temperature", "beta", "dirichlet2"):
            r = het_pipeline(seed, method)
            labels = assign(r["cm"], r["cal_E"])
            for c in range(r["cm"].k):
                mask = labels == c
                meta = r["ccl"].cluster_meta[c]
                if not mask.any() or meta["used_constant"]:
                    continue
                sub = FitData(r["cal_s"].margins[mask],
                              r["cal_s"].probabilities[mask], r["y_cal"][mask])
                checked += 1
                if r["ccl"].resolve(c).nll(sub) > r["uni"].nll(sub) + 1e-8:
                    violations += 1
    dt = time.perf_counter() - t0
    ok = violations == 0 and dt < 120.0
    verdict(4, ok, f"per-cluster NLL bound: {checked - violations}/{checked} "
                   f"clusters over 20 seeds x 4 methods, {dt:.1f}s")


def test_criterion_05_cece_superiority():
    cece_wins = {"platt": 0, "temperature": 0}
    nll_holds = 0
    for seed in range(30):
        for method in cece_wins:
            r = het_pipeline(seed, method)
            c_ccl = cece(r["p_ccl"], r["y_te"], r["te_clusters"])[0]
            c_uni = cece(r["p_uni"], r["y_te"], r["te_clusters"])[0]
            if c_ccl <= c_uni:
                cece_wins[method] += 1
            if method == "platt":
                cal_data = FitData.from_scores(r["cal_s"], r["y_cal"])
                p_cal, _ = r["ccl"].infer(r["cal_s"], r["cal_E"])
                from clustercal.calibrators import nll_of_probs
                if nll_of_probs(p_cal, r["y_cal"]) <= r["uni"].nll(cal_data) + 1e-8:
                    nll_holds += 1
    ok = all(v >= 24 for v in cece_wins.values()) and nll_holds == 30
    verdict(5, ok, f"test-split CECE(CCL) <= CECE(unified): platt "
                   f"{cece_wins['platt']}/30, temperature {cece_wins['temperature']}/30 "
                   f"(need >= 24); calibration-split NLL bound {nll_holds}/30 (need 30)")


def test_criterion_06_improved_sample_fraction():
    spec_kwargs = dict(n_subpops=2, samples_per_subpop=600,
                       base_rates=(0.35, 0.65), miscal_offsets=(2.0, -2.0))
    best = {}
    for method in ("platt", "temperature", "beta", "dirichlet2"):
        r = het_pipeline(0, method, spec_kwargs, k=2)
        best[method] = improved_sample_fraction(
            r["ccl"], r["uni"], r["te_s"],
            EmbeddingMatrix("raw", r["te_E"]), r["y_te"])
    top = max(best.values())
    ok = top >= 0.8
    verdict(6, ok, "two-subpop improved-sample fraction " +
            ", ".join(f"{m}={v:.3f}" for m, v in best.items()) + " (need >= 0.8 once)")


def test_criterion_07_model_selection():
    qualifying, holds, violations = 0, 0, []
    for seed in range(30):
        cfg = ExperimentConfig.from_dict({
            "data": {"synthetic": dict(
                n_subpops=3, samples_per_subpop=700, d=2,
                base_rates=[0.3, 0.5, 0.7], miscal_offsets=[2.0, -2.0, 1.0],
                noise=0.7, seed=seed)},
            "model": {"synthetic_scores": {}},
            "embedding": {"kind": "raw"},
            "clustering": {"method": "kmeans", "k": 3},
            "methods": ["platt", "temperature", "beta"],
            "seed": seed,
        })
        rows = [r for r in run_experiment(cfg).rows if r["variant"] != "base"]
        by_cece = min(rows, key=lambda r: (r["CECE"], -r["AUC"], r["variant"]))
        by_ece = min(rows, key=lambda r: (r["ECE"], -r["AUC"], r["variant"]))
        gap = by_ece["CECE"] - by_cece["CECE"]
        if gap > 0.005:
            qualifying += 1
            if by_cece["AUC"] >= by_ece["AUC"]:
                holds += 1
            else:
                violations.append((seed, by_cece["variant"], by_ece["variant"],
                                   by_cece["AUC"], by_ece["AUC"]))
    for v in violations:
        print(f"  criterion 7 AUC-ordering violation: {v}")
    ok = qualifying > 0 and holds >= int(np.ceil(0.9 * qualifying))
    verdict(7, ok, f"CECE-selected AUC >= ECE-selected AUC in {holds}/{qualifying} "
                   f"qualifying runs (gap > 0.005); {len(violations)} violation(s) logged")


def test_criterion_08_rejection(tmp_path):
    mono = 0
    for seed in range(30):
        r = het_pipeline(seed, "platt")
        curve = rejection_curve(r["p_ccl"], r["y_te"])
        if curve.error_rate[0] <= curve.error_rate[-1]:
            mono += 1

    # CSV recompute: rejection.csv must be reproducible from the scores CSV
    out = str(tmp_path / "run")
    cfg = ExperimentConfig.from_dict({
        "data": {"synthetic": dict(**HET3, seed=3)},
        "model": {"synthetic_scores": {}},
        "embedding": {"kind": "raw"},
        "clustering": {"method": "kmeans", "k": 3},
        "methods": ["platt"],
        "seed": 3, "out": out,
    })
    run_experiment(cfg)
    scores = {}
    for variant in ("base", "platt_unified", "platt_ccl"):
        arr = np.loadtxt(os.path.join(out, f"calibrated_scores_{variant}.csv"),
                         delimiter=",", skiprows=1, usecols=(1, 2), ndmin=2)
        scores[variant] = (arr[:, 0], arr[:, 1].astype(int))
    recompute_err = 0.0
    with open(os.path.join(out, "rejection.csv")) as fh:
        next(fh)
        for line in fh:
            variant, t, acc, err, rej = line.strip().split(",")
            p, y = scores[variant]
            c = rejection_curve(p, y, [float(t)])
            recompute_err = max(recompute_err,
                                abs(c.error_rate[0] - float(err)),
                                abs(c.rejection_rate[0] - float(rej)),
                                abs(c.accepted[0] - int(acc)))
    ok = mono >= 27 and recompute_err <= 1e-12
    verdict(8, ok, f"error(t=0) <= error(t=0.9) in {mono}/30 seeds (need >= 27); "
                   f"rejection.csv recompute err {recompute_err:.2e}")


def test_criterion_09_significance_harness():
    # signal: clustered vs unified calibration on the miscalibrated fixture
    r = het_pipeline(3, "platt")
    signal = paired_resample_test(r["p_ccl"], r["p_uni"], r["y_te"], "ece",
                                  fraction=0.3, iterations=30, seed=0)
    # null: two independent noise-perturbed copies of calibrated scores
    g = np.random.default_rng(11)
    p_base = g.uniform(0.05, 0.95, 200)
    y_null = (g.uniform(size=200) < p_base).astype(int)
    rng = np.random.default_rng(7)
    null_ok = 0
    for rep in range(30):
        a = np.clip(p_base + rng.normal(scale=0.01, size=200), 1e-6, 1 - 1e-6)
        b = np.clip(p_base + rng.normal(scale=0.01, size=200), 1e-6, 1 - 1e-6)
        res = paired_resample_test(a, b, y_null, "ece", fraction=0.3,
                                   iterations=30, seed=100 + rep)
        if res.p_two_sided > 0.01:
            null_ok += 1
    ok = signal.p_one_sided < 1e-3 and null_ok >= 25
    verdict(9, ok, f"signal one-sided p = {signal.p_one_sided:.2e} (need < 1e-3); "
                   f"null two-sided p > 0.01 in {null_ok}/30 repetitions (need >= 25)")


def _end_to_end_assertions(cfg_dict, n_label, n_expected):
    t0 = time.perf_counter()
    report = run_experiment(ExperimentConfig.from_dict(cfg_dict))
    dt = time.perf_counter() - t0
    wins = {m: report.row(f"{m}_ccl")["CECE"] < report.row(f"{m}_unified")["CECE"]
            for m in ("platt", "temperature", "beta", "dirichlet2")}
    ok = dt < 300.0 and any(wins.values())
    verdict(10, ok, f"{n_label} ({n_expected} rows) pipeline {dt:.0f}s (need < 300); "
            "CCL CECE wins: " + ", ".join(m for m, w in wins.items() if w))


def test_criterion_10_end_to_end_scale():
    if os.path.exists(ADULT_CSV):
        _end_to_end_assertions({
            "data": {"csv": {"path": ADULT_CSV, "label_column": "income"}},
            "model": {"gbt": {"n_trees": 30, "max_depth": 4}},
            "embedding": {"kind": "shap"},
            "clustering": {"method": "kmeans", "k": 8},
            "methods": ["platt", "temperature", "beta", "dirichlet2"],
            "seed": 0,
        }, "adult census data", 48842)
    else:
        # No network access in this environment: run the same full pipeline
        # (boosting, attributions, clustering, all methods) at identical scale
        # on synthetic data. Fetch the real file with scripts/fetch_adult.py
        # and re-run to exercise the census data itself.
        print("ACCEPTANCE 10 NOTE: data/adult.csv absent; "
              "using a same-scale synthetic stand-in (see scripts/fetch_adult.py)")
        _end_to_end_assertions({
            "data": {"synthetic": {
                "n_subpops": 4, "samples_per_subpop": 12211, "d": 12,
                "base_rates": [0.15, 0.35, 0.65, 0.85],
                "miscal_offsets": [0.0, 0.0, 0.0, 0.0],
                "noise": 1.0, "seed": 0}},
            "model": {"gbt": {"n_trees": 30, "max_depth": 4}},
            "embedding": {"kind": "shap"},
            "clustering": {"method": "kmeans", "k": 8},
            "methods": ["platt", "temperature", "beta", "dirichlet2"],
            "seed": 0,
        }, "synthetic stand-in", 48844)


def test_criterion_11_cli_determinism(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({
        "data": {"synthetic": dict(
            n_subpops=3, samples_per_subpop=200, d=2,
            base_rates=[0.2, 0.5, 0.8], miscal_offsets=[2.0, -2.0, 1.0],
            noise=1.0, seed=0)},
        "model": {"gbt": {"n_trees": 5, "max_depth": 3}},
        "embedding": {"kind": "shap"},
        "clustering": {"method": "kmeans", "k": 3},
        "methods": ["platt", "isotonic"],
        "seed": 0,
    }))
    identical = True
    detail = []
    for command in ("train", "cluster", "report"):
        a, b = tmp_path / f"{command}_a", tmp_path / f"{command}_b"
        assert cli_main([command, "--config", str(cfg_path), "--out", str(a)]) == 0
        assert cli_main([command, "--config", str(cfg_path), "--out", str(b)]) == 0
        names = sorted(os.listdir(a))
        same = names == sorted(os.listdir(b)) and all(
            (a / n).read_bytes() == (b / n).read_bytes() for n in names)
        identical &= same
        detail.append(f"{command}: {len(names)} files {'identical' if same else 'DIFFER'}")
    verdict(11, identical, "; ".join(detail))
