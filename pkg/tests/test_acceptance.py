"""Acceptance criteria 1-10; each test records one PASS/FAIL line for the terminal summary."""

import itertools
import math
import time

import numpy as np
import pytest

from houdini import tensor as T
from houdini.attacks import AttackSpec, fgsm_step, run_campaign
from houdini.data import SyntheticDataset
from houdini.gradcheck import rel_error, run_gradcheck
from houdini.metrics import KeypointAnnotation, LabelMap, levenshtein, mean_iou, pckh, perceptibility, ssim
from houdini.models import ctc_label_score
from houdini.report import write_campaign, write_report
from houdini.surrogates import ScorePair, gaussian_tail, houdini_grad_scores, houdini_loss
from oracles import ctc_brute_force, gaussian_tail_quad, levenshtein_recursive


def test_criterion_01_gradient_correctness(record):
    t0 = time.perf_counter()
    results = run_gradcheck(seed=7, configs=100)
    elapsed = time.perf_counter() - t0
    counts = {f: sum(r.family == f for r in results) for f in ("sequence", "keypoints", "segmentation")}
    worst = max(r.houdini_error for r in results)
    ok = worst <= 1e-4 and elapsed <= 120 and min(counts.values()) >= 100
    record(1, ok, f"max rel err {worst:.2e} over {sum(counts.values())} configs in {elapsed:.1f}s")
    assert ok


def test_criterion_02_score_gradient_exact(record):
    rng = np.random.default_rng(2)
    h = 1e-6
    worst = 0.0
    for dg, ell in zip(rng.uniform(-6, 6, 1000), rng.uniform(0, 2, 1000)):
        num = (houdini_loss(ScorePair(dg + h, 0.0), ell).value - houdini_loss(ScorePair(dg - h, 0.0), ell).value) / (2 * h)
        worst = max(worst, rel_error(houdini_grad_scores(ScorePair(dg, 0.0), ell)[0], num))
    record(2, worst <= 1e-6, f"max rel err {worst:.2e} over 1000 draws")
    assert worst <= 1e-6


def test_criterion_03_lower_bound_and_convergence(record):
    rng = np.random.default_rng(3)
    dgs, ells = rng.uniform(-40, 40, 10_000), rng.uniform(0, 2, 10_000)
    violations = sum(not (0.0 <= houdini_loss(ScorePair(d, 0.0), l).value <= l) for d, l in zip(dgs, ells))
    tail = [(d, l) for d, l in zip(rng.uniform(-40, -6, 10_000), rng.uniform(1e-3, 2, 10_000))]
    worst = max(abs(houdini_loss(ScorePair(d, 0.0), l).value - l) / l for d, l in tail)
    ok = violations == 0 and worst <= 1e-6
    record(3, ok, f"{violations} bound violations in 10000 draws; worst tail gap {worst:.2e}*l")
    assert ok


def test_criterion_04_ctc_oracle(record):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    worst, mismatched_flags = 0.0, 0
    for _ in range(200):
        n_t, n_a = int(rng.integers(1, 9)), int(rng.integers(1, 4))
        logp = T.log_softmax(rng.normal(0, 2, (n_t, n_a + 1)), axis=-1).data
        brute = ctc_brute_force(logp)
        for n in range(4):
            for lab in itertools.product(range(n_a), repeat=n):
                res = ctc_label_score(logp, lab)
                if lab in brute:
                    worst = max(worst, abs(res.value.item() - brute[lab]))
                    mismatched_flags += not res.feasible
                else:
                    mismatched_flags += res.feasible
    norm_err = 0.0
    for n_t in range(1, 5):
        for n_a in range(1, 4):
            logp = T.log_softmax(rng.normal(0, 2, (n_t, n_a + 1)), axis=-1).data
            total = 0.0
            for n in range(n_t + 1):
                for lab in itertools.product(range(n_a), repeat=n):
                    res = ctc_label_score(logp, lab)
                    total += math.exp(res.value.item()) if res.feasible else 0.0
            norm_err = max(norm_err, abs(total - 1.0))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and mismatched_flags == 0 and norm_err <= 1e-8 and elapsed <= 60
    record(4, ok, f"log err {worst:.1e}, normalization err {norm_err:.1e}, {elapsed:.1f}s")
    assert ok


def test_criterion_05_levenshtein_oracle(record):
    rng = np.random.default_rng(5)
    mismatches = 0
    for _ in range(1000):
        a = "".join(rng.choice(list("abc"), rng.integers(0, 8)))
        b = "".join(rng.choice(list("abc"), rng.integers(0, 8)))
        mismatches += levenshtein(a, b) != levenshtein_recursive(a, b)
    record(5, mismatches == 0, f"{mismatches} mismatches in 1000 pairs")
    assert mismatches == 0


def test_criterion_06_metric_sanity(record):
    rng = np.random.default_rng(6)
    truth = KeypointAnnotation(rng.uniform(0, 15, (4, 2)), np.ones(4, bool), 4.0)
    labels = LabelMap(rng.integers(0, 3, (6, 6)), 3)
    x = rng.uniform(0, 1, (3, 10, 10))
    v = rng.choice([-1.0, 1.0], x.shape) * rng.uniform(0.1, 1, x.shape)
    checks = {
        "pckh": pckh(truth, truth) == 1.0,
        "miou": mean_iou(labels, labels) == 1.0,
        "perceptibility": all(perceptibility(x, x + e * np.sign(v)) == pytest.approx(e, abs=1e-15)
                              for e in (0.01, 0.1, 0.3)),
        "ssim": abs(ssim(x, x) - 1.0) <= 1e-12,
        "tail0": abs(gaussian_tail(0.0) - 0.5) <= 1e-12,
        "tail_quad": max(abs(gaussian_tail(t) - gaussian_tail_quad(t)) for t in np.linspace(-8, 8, 100)) <= 1e-9,
    }
    failed = [k for k, ok in checks.items() if not ok]
    record(6, not failed, "all sanity checks hold" if not failed else f"failed: {failed}")
    assert not failed


def test_criterion_07_keypoint_attack(record, trained_keypoints):
    t0 = time.perf_counter()
    model, val = trained_keypoints
    clean = float(np.mean([pckh(model.predict(x, y), y) for x, y in val]))
    spec = AttackSpec(surrogate="houdini", norm=2, epsilon=math.inf, step=0.1, max_iter=300, project=False,
                      clamp=(0.0, 1.0))
    rows = run_campaign(model, val, [spec]).rows
    broken = sum(1 for r in rows if r.get("error") is None and r["adv_pckh"] < 0.05 and r["iterations"] <= 300)
    frac = broken / len(rows)
    elapsed = time.perf_counter() - t0
    ok = clean >= 0.9 and len(val) >= 50 and frac >= 0.9 and elapsed <= 300
    record(7, ok, f"clean PCKh {clean:.3f}; {broken}/{len(rows)} examples below 0.05 "
                  f"(mean {np.mean([r['iterations'] for r in rows]):.1f} iters), {elapsed:.1f}s")
    assert ok


def test_criterion_08_sequence_eps_trend(record, trained_sequence):
    model, val = trained_sequence
    grid = (0.05, 0.1, 0.2, 0.3)
    specs = [AttackSpec(surrogate=s, norm=math.inf, epsilon=e) for s in ("ctc", "houdini") for e in grid]
    summary = {(s["surrogate"], s["epsilon"]): s for s in run_campaign(model, val, specs).summary}
    ok, parts = True, []
    for sur in ("ctc", "houdini"):
        wers = [summary[(sur, e)]["adv_wer"] for e in grid]
        clean = summary[(sur, grid[0])]["clean_wer"]
        ok &= all(a <= b for a, b in zip(wers, wers[1:])) and wers[-1] > clean
        parts.append(f"{sur} WER {clean:.2f} -> " + "/".join(f"{w:.2f}" for w in wers))
    record(8, ok, "; ".join(parts))
    assert ok


def test_criterion_09_attack_geometry(record, trained_segmentation):
    model, val = trained_segmentation
    rng = np.random.default_rng(9)
    inf_ok = l2_ok = True
    for x, _ in list(val)[:20]:
        g = rng.normal(size=x.shape) * (rng.random(x.shape) < 0.8)  # some exact zeros
        for eps in (0.01, 0.1, 0.3):
            d = fgsm_step(x, g, eps, math.inf) - x
            inf_ok &= bool(np.all(np.isclose(np.abs(d), eps, rtol=0, atol=1e-12) | (d == 0)))
            l2_ok &= abs(np.linalg.norm(fgsm_step(x, g, eps, 2) - x) - eps) <= 1e-10
    specs = [AttackSpec(surrogate=s, norm=p, epsilon=e, step=e / 4, max_iter=12, clamp=(0, 1), patience=12)
             for s in ("houdini", "nll") for p, e in ((math.inf, 0.05), (2.0, 0.5))]
    rows = run_campaign(model, val, specs).rows
    outside = sum(1 for r in rows for t in r["_trace"] if t["distance"] > r["epsilon"] + 1e-10)
    checked = sum(len(r["_trace"]) for r in rows)
    ok = inf_ok and l2_ok and outside == 0 and checked > 0
    record(9, ok, f"Linf step {'ok' if inf_ok else 'BAD'}, L2 step {'ok' if l2_ok else 'BAD'}, "
                  f"{outside} of {checked} projected iterates outside the ball")
    assert ok


def test_criterion_10_determinism(record, trained_segmentation, tmp_path):
    model, val = trained_segmentation
    small = SyntheticDataset(val.family, val.examples[:10], val.seed, val.params)
    specs = [AttackSpec(surrogate="houdini", epsilon=0.1, step=0.02, max_iter=8),
             AttackSpec(surrogate="nll", mode="targeted", epsilon=0.1, step=0.02, max_iter=8)]
    texts = []
    for run in ("a", "b"):
        out = tmp_path / run
        write_campaign(out, "segmentation", specs, run_campaign(model, small, specs, workers=2))
        write_report(out)
        texts.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    ok = texts[0] == texts[1] and "report.txt" in texts[0]
    record(10, ok, f"{len(texts[0])} output files byte-identical across two runs" if ok else "outputs differ")
    assert ok
