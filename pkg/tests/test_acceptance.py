"""Acceptance criteria, one test each. Every test prints a PASS/FAIL line.

Run just these with ``pytest tests/test_acceptance.py -v``; the lines are
repeated in the terminal summary.
"""
import json
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from conftest import make_dataset, record_acceptance
from oracles import (exhaustive_validation_check, finite_difference_grad, random_gradcheck_case,
                     relative_error, tar_oracle, threshold_oracle_np)
from xmatch import cli, kernels
from xmatch.analysis import split_scores, subset_score_matrix
from xmatch.core import cross_modal_scores, l2_normalize_rows
from xmatch.metrics import ScoreSet, d_prime, tar_at_far, threshold_at_far
from xmatch.mining import DOCUMENT, SELFIE, MiningBatch, batch_distances, mine_arrays
from xmatch.synth import SynthConfig, generate
from xmatch.trainer import EmbeddingHead, TrainConfig, loss_and_gradient, train
from xmatch.valbuilder import build_hard_validation


def verdict(number, title, ok, detail):
    record_acceptance(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} -- {detail}")
    assert ok, detail


# ---------------------------------------------------------------- 1

def random_scoreset(rng):
    def draw(n):
        x = rng.normal(rng.uniform(-0.2, 0.6), rng.uniform(0.02, 0.3), n)
        decimals = rng.choice([1, 2, 3, -1])
        return np.round(x, decimals) if decimals > 0 else x  # coarse rounding = many ties

    sizes = np.exp(rng.uniform(0, np.log(5000), 2)).astype(int) + 1
    sizes = np.minimum(sizes, 5000)
    if rng.random() < 0.05:
        sizes[1] = 5000
    return draw(sizes[0]), draw(sizes[1])


def test_criterion_1_threshold_oracle():
    rng = np.random.default_rng(20240601)
    t0 = time.perf_counter()
    mismatches, checks = 0, 0
    for _ in range(1000):
        auth, imp = random_scoreset(rng)
        n = imp.size
        fars = [1e-4, 1e-3, 0.01, rng.uniform(0, 0.999), rng.integers(0, n) / n]
        s = ScoreSet(auth, imp)
        for far in fars:
            got_t = threshold_at_far(imp, far)
            got = tar_at_far(s, far)
            want = tar_oracle(auth, imp, far, threshold_fn=threshold_oracle_np)
            checks += 1
            if got_t != threshold_oracle_np(imp, far) or \
                    (got.threshold, got.tar, got.achieved_far) != want:
                mismatches += 1
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 30.0
    verdict(1, "threshold/TAR vs enumeration oracle", ok,
            f"{mismatches} mismatches in {checks} checks over 1000 sets, {elapsed:.1f} s (< 30 s)")


# ---------------------------------------------------------------- 2

def test_criterion_2_gradient_check():
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        head, xa, xp, xn = random_gradcheck_case(rng)
        _, gW, gb = loss_and_gradient(head, xa, xp, xn, 0.3)
        fW, fb = finite_difference_grad(
            lambda W, b: loss_and_gradient(EmbeddingHead(W, b), xa, xp, xn, 0.3)[0],
            head.W.copy(), head.b.copy(), h=1e-5)
        err = relative_error(np.concatenate([gW.ravel(), gb]), np.concatenate([fW.ravel(), fb]))
        worst = max(worst, err)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-5 and elapsed < 10.0
    verdict(2, "analytic vs central-difference gradient", ok,
            f"max relative error {worst:.2e} (<= 1e-5) over 100 cases, {elapsed:.1f} s (< 10 s)")


# ---------------------------------------------------------------- 3

def test_criterion_3_validation_builder():
    train_pool, _, _ = generate(SynthConfig(n_train_subjects=3000, n_test_per_subset=2, seed=3))
    t0 = time.perf_counter()
    vs = build_hard_validation(train_pool, l2_normalize_rows, folds=10, per_fold=300,
                               rng=np.random.default_rng(0))
    problems = []
    if len(vs.folds) != 10:
        problems.append(f"{len(vs.folds)} folds")
    if vs.n_pairs != 6000:
        problems.append(f"{vs.n_pairs} pairs")
    for f in vs.folds:
        if len(f.authentic) != 300 or len(f.impostor) != 300:
            problems.append("fold size")
        if any(s != d for s, d in f.authentic):
            problems.append("authentic pair across subjects")
    try:
        exhaustive_validation_check(train_pool, vs, 300, l2_normalize_rows,
                                    enumerate_subsets=False)
    except AssertionError as exc:
        problems.append(f"pool brute-force check: {exc}")

    # toy folds: compare with enumeration over every subset and every pair
    rng = np.random.default_rng(11)
    toy_cases = 0
    for _ in range(50):
        folds = int(rng.integers(1, 5))
        per_fold = int(rng.integers(2, 5))
        n = folds * (per_fold + int(rng.integers(0, 4)))
        ds = make_dataset(n, d=4, seed=int(rng.integers(1 << 30)))
        toy = build_hard_validation(ds, l2_normalize_rows, folds, per_fold,
                                    np.random.default_rng(toy_cases))
        try:
            exhaustive_validation_check(ds, toy, per_fold, l2_normalize_rows)
        except AssertionError as exc:
            problems.append(f"toy case {toy_cases}: {exc}")
        toy_cases += 1
    elapsed = time.perf_counter() - t0
    verdict(3, "hard validation set contract", not problems,
            f"10 disjoint folds x (300+300) = {vs.n_pairs} pairs on 3000 subjects; "
            f"{toy_cases} toy cases vs enumeration; {len(problems)} problems; {elapsed:.1f} s")


# ---------------------------------------------------------------- 4

def test_criterion_4_mining_soundness():
    rng = np.random.default_rng(4)
    t0 = time.perf_counter()
    violations, n_trip, n_fallback = 0, 0, 0
    for _ in range(10_000):
        half = int(rng.integers(1, 121))
        d = int(rng.integers(2, 17))
        emb = l2_normalize_rows(rng.standard_normal((2 * half, d)))
        if rng.random() < 0.3:
            emb = l2_normalize_rows(np.round(emb, 1) + 1e-9)  # tied distances
        margin = float(rng.choice([1e-9, 0.05, 0.3, 1.0, 4.0]))
        batch = MiningBatch(tuple(range(half)), np.arange(half),
                            np.concatenate([np.arange(half), np.arange(half)]),
                            np.repeat(np.array([SELFIE, DOCUMENT], dtype=np.int8), half), emb)
        mode = "both" if rng.random() < 0.8 else "selfie_only"
        a, p, n, semi, d_ap, d_an = mine_arrays(batch, emb, margin, rng, mode)
        s, m = batch.subject, batch.modality
        bad = (s[p] != s[a]) | (m[p] == m[a]) | (s[n] == s[a]) | (m[n] != m[p])
        bad |= ~(d_an > d_ap)
        bad |= semi & ~(d_an < d_ap + margin)
        # fallback: window empty and the negative is the closest one beyond d_ap
        dist = batch_distances(emb)
        row = dist[a]
        cand = (s[None, :] != s[a][:, None]) & (m[None, :] != m[a][:, None])
        above = cand & (row > d_ap[:, None])
        window = above & (row < (d_ap + margin)[:, None])
        closest = np.where(above, row, np.inf).min(axis=1)
        bad |= ~semi & (window.any(axis=1) | (d_an != closest))
        violations += int(bad.sum())
        # skipped anchors must have had no negative beyond d_ap at all
        anchors = np.arange(2 * half) if mode == "both" else np.arange(half)
        skipped = np.setdiff1d(anchors, a)
        if skipped.size:
            partner = (skipped + half) % (2 * half)
            sk_ap = dist[skipped, partner]
            sk_cand = (s[None, :] != s[skipped][:, None]) & (m[None, :] != m[skipped][:, None])
            violations += int((sk_cand & (dist[skipped] > sk_ap[:, None])).any(axis=1).sum())
        n_trip += a.size
        n_fallback += int((~semi).sum())
    elapsed = time.perf_counter() - t0
    verdict(4, "mining constraints over 10^4 batches", violations == 0,
            f"{violations} violations in {n_trip} triplets ({n_fallback} fallback), {elapsed:.1f} s")


# ---------------------------------------------------------------- 5

def subset_tars(tests, head, far=1e-4):
    out = {}
    for label, ds in tests.items():
        out[label.name] = tar_at_far(split_scores(subset_score_matrix(ds, head)), far).tar
    return out


@pytest.mark.slow
def test_criterion_5_synthetic_subset_analog():
    t0 = time.perf_counter()
    cfg = SynthConfig()  # 20,000 train subjects, 600 per subset, seed 0
    train_pool, tests, _ = generate(cfg)
    tc = TrainConfig()
    train_set, validation, head0 = cli.prepare_training(train_pool, tc)
    best, history = train(train_set, validation, tc, head=head0)
    base = subset_tars(tests, None)
    tuned = subset_tars(tests, best)
    order = ["i18s1819", "i16s1819", "i14s1819", "i12s1819", "i10s1819"]
    decreasing = all(base[a] > base[b] for a, b in zip(order, order[1:]))
    improved = all(tuned[k] > base[k] for k in order)
    gap_base = max(base.values()) - min(base.values())
    gap_tuned = max(tuned.values()) - min(tuned.values())
    shrink = 1.0 - gap_tuned / gap_base
    elapsed = time.perf_counter() - t0
    table = ", ".join(f"{k} {100 * base[k]:.2f}->{100 * tuned[k]:.2f}" for k in reversed(order))
    record_acceptance(f"    TAR@0.01% baseline->tuned: {table}; best iteration "
                      f"{history.best_iteration}")
    ok = decreasing and improved and shrink >= 0.5 and elapsed < 900
    verdict(5, "synthetic subset ordering, improvement and gap shrink", ok,
            f"(a) strictly decreasing={decreasing}; (b) all improve={improved}; "
            f"(c) gap {100 * gap_base:.2f} -> {100 * gap_tuned:.2f} pts, shrink {100 * shrink:.1f}% "
            f"(>= 50%); {elapsed:.0f} s (< 900 s)")


# ---------------------------------------------------------------- 6

def test_criterion_6_d_prime():
    rng = np.random.default_rng(6)
    s = ScoreSet(rng.normal(1.0, 1.0, 100_000), rng.normal(0.0, 1.0, 100_000))
    value = d_prime(s)
    verdict(6, "d-prime of N(1,1) vs N(0,1)", abs(value - 1.0) <= 0.02,
            f"d' = {value:.4f} (1.00 +- 0.02)")


# ---------------------------------------------------------------- 7

@pytest.mark.slow
def test_criterion_7_card_format_direction(tmp_path):
    assert cli.main(["synth", "--out", str(tmp_path), "--seed", "0", "--n-train", "10",
                     "--reference-sizes"]) == 0
    files = sorted(str(p) for p in tmp_path.glob("i*.csv"))
    assert cli.main(["analyze", "--mode", "card_format", "--out", str(tmp_path), "--seed", "0",
                     "--n-draws", "10", "--dataset", *files]) == 0
    rep = json.loads((tmp_path / "analyze_card_format.json").read_text())
    verdicts = rep["verdicts"]
    counts = {k: f"{sum(v['yellow_below_blue'])}/{len(v['yellow_below_blue'])}"
              for k, v in verdicts.items()}
    ok = bool(verdicts) and all(v["all_draws"] and len(v["yellow_below_blue"]) == 10
                                for v in verdicts.values())
    verdict(7, "yellow authentic mean below blue in every draw", ok,
            f"mixed-format subsets {counts} draws with yellow < blue (need 10/10 each)")


# ---------------------------------------------------------------- 8

def test_criterion_8_cross_modal_performance(tmp_path):
    rng = np.random.default_rng(8)
    docs = l2_normalize_rows(rng.standard_normal((2642, 512)))
    selfies = l2_normalize_rows(rng.standard_normal((2642, 512)))
    cross_modal_scores(docs[:2], selfies[:2])  # JIT warm-up outside the timer
    t0 = time.perf_counter()
    full = cross_modal_scores(docs, selfies)
    elapsed = time.perf_counter() - t0
    if kernels.cosine_matrix_numba is not None:
        import numba

        threads = numba.get_num_threads()
        numba.set_num_threads(1)
        try:
            single = cross_modal_scores(docs, selfies)
        finally:
            numba.set_num_threads(threads)
        note = f"numba, {threads} thread(s) vs 1"
    else:
        # rerun the same fallback in a fresh process pinned to one BLAS thread
        out = tmp_path / "single.npy"
        code = ("import sys, numpy as np; from xmatch.core import cross_modal_scores, "
                "l2_normalize_rows; rng = np.random.default_rng(8); "
                "d = l2_normalize_rows(rng.standard_normal((2642, 512))); "
                "s = l2_normalize_rows(rng.standard_normal((2642, 512))); "
                "np.save(sys.argv[1], cross_modal_scores(d, s))")
        env = dict(os.environ, XMATCH_DISABLE_NUMBA="1", OMP_NUM_THREADS="1",
                   OPENBLAS_NUM_THREADS="1", MKL_NUM_THREADS="1")
        subprocess.run([sys.executable, "-c", code, str(out)], env=env, check=True)
        single = np.load(out)
        note = "numpy fallback, default BLAS threads vs 1"
    same = np.array_equal(full, single)
    verdict(8, "2642x2642 d=512 cross-modal scores", elapsed < 10.0 and same,
            f"{elapsed:.2f} s (< 10 s); identical to single-thread run: {same} ({note})")


# ---------------------------------------------------------------- 9

def test_criterion_9_train_determinism(tmp_path):
    data = tmp_path / "data"
    data.mkdir()
    assert cli.main(["synth", "--out", str(data), "--seed", "9", "--n-train", "3000",
                     "--n-test", "10"]) == 0
    runs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        out.mkdir()
        assert cli.main(["train", "--train", str(data / "train.csv"), "--out", str(out),
                         "--seed", "9", "--max-iterations", "400", "--eval-interval", "100"]) == 0
        runs.append(out)
    same = {name: (runs[0] / name).read_bytes() == (runs[1] / name).read_bytes()
            for name in ("history.csv", "checkpoint.json", "validation.csv")}
    verdict(9, "train rerun is byte-identical", all(same.values()),
            ", ".join(f"{k} identical={v}" for k, v in same.items()))

