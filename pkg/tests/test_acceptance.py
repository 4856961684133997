"""Desk-scale acceptance criteria 1-10.

Every criterion records one PASS/FAIL line (shown in the pytest summary and
on stdout with ``-s``). Seeds here are never used while tuning defaults.
"""
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from oracles import brute_otsu, dense_walker
from resample_forensics.dataset import synthetic_sources
from resample_forensics.experiments import (
    BankConfig,
    LstmExperimentConfig,
    SpliceConfig,
    bank_experiment,
    em_recovery,
    gradient_trials,
    localization_experiment,
    lstm_dataset,
    lstm_experiment,
    resampling_signal,
    train_channel_models,
)
from resample_forensics.nnet.serialize import model_bytes
from resample_forensics.segmentation import Histogram, bilateral_filter, otsu_threshold, solve_random_walker

pytestmark = pytest.mark.slow

SEED = 2026
BANK_TASKS = ("upsample", "downsample", "rotate_cw", "rotate_ccw", "shear")


def record(n: int, passed: bool, detail: str) -> None:
    line = f"criterion {n:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)


def timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0


# -- shared runs -------------------------------------------------------------------

@pytest.fixture(scope="session")
def bank_sources():
    return synthetic_sources(40, 512, SEED)


@pytest.fixture(scope="session")
def bank(bank_sources):
    return {t: bank_experiment(BankConfig(task=t, seed=SEED), bank_sources) for t in BANK_TASKS}


@pytest.fixture(scope="session")
def lstm_data():
    return lstm_dataset(LstmExperimentConfig(seed=SEED))


@pytest.fixture(scope="session")
def lstm_fast(lstm_data):
    return lstm_experiment(LstmExperimentConfig(seed=SEED, inputs="fast"), lstm_data)


# -- criteria ----------------------------------------------------------------------

def test_criterion_1_gradients():
    errs, secs = timed(gradient_trials, 100, SEED)
    worst = max(max(errs["mlp"]), max(errs["lstm"]))
    ok = worst < 1e-4 and secs < 120
    record(1, ok, f"max rel err {worst:.2e} over {len(errs['mlp'])}+{len(errs['lstm'])} configs "
                  f"({errs['redrawn']} redrawn off a kink, {errs['near_kink']} left near one), {secs:.0f}s")
    assert ok


def test_criterion_2_resampling_signal():
    (pristine, resampled), secs = timed(resampling_signal, 20, 256, 1.5, SEED)
    rate = float(np.mean(resampled >= 3 * pristine))
    ok = rate >= 0.9 and secs < 120
    record(2, ok, f"{rate:.0%} of 20 images reach 3x (median ratio {np.median(resampled / pristine):.1f}x), {secs:.0f}s")
    assert ok


def test_criterion_3_em_recovery():
    trials = em_recovery(20, seed=SEED, max_iters=50)
    worst = max(t["error"] for t in trials)
    iters = max(t["iterations"] for t in trials)
    ok = worst < 1e-3 and iters <= 50
    record(3, ok, f"max coefficient error {worst:.1e}, at most {iters} iterations, 20/20 trials")
    assert ok


def test_criterion_4_model_one_bank(bank):
    up = bank["upsample"]
    others = {t: bank[t].mlp_auc for t in BANK_TASKS[1:]}
    ok = up.mlp_auc >= 0.85 and up.seconds < 600 and all(a >= 0.70 for a in others.values())
    detail = ", ".join(f"{t} {a:.3f}" for t, a in others.items())
    record(4, ok, f"upsample AUC {up.mlp_auc:.3f} ({up.seconds:.0f}s); {detail}")
    assert ok


def test_criterion_5_mlp_beats_qda(bank):
    up = bank["upsample"]
    ok = up.mlp_auc >= up.qda_auc
    record(5, ok, f"MLP {up.mlp_auc:.3f} vs QDA {up.qda_auc:.3f}")
    assert ok


def test_criterion_6_patch_size_trend(bank, bank_sources):
    big = bank_experiment(BankConfig(task="upsample", patch_size=128, seed=SEED), bank_sources)
    small = bank["upsample"].mlp_auc
    ok = big.mlp_auc >= small - 0.01
    record(6, ok, f"AUC 128px {big.mlp_auc:.3f} vs 64px {small:.3f}")
    assert ok


def test_criterion_7_segmentation_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    otsu_ok = 0
    for _ in range(1000):
        counts = rng.integers(0, 50, size=256) * (rng.random(256) < rng.uniform(0.02, 1))
        if np.count_nonzero(counts) < 2:
            counts[[0, 255]] = 1
        otsu_ok += otsu_threshold(Histogram(counts.astype(float), 256)).threshold == brute_otsu(counts.tolist())
    worst = 0.0
    for h in range(1, 9):
        for w in range(1, 9):
            if h * w < 2:
                continue
            g = rng.random((h, w))
            labels = np.zeros(h * w, dtype=np.int8)
            k = rng.permutation(h * w)
            labels[k[0]], labels[k[1]] = 1, 2
            labels = labels.reshape(h, w)
            got = solve_random_walker(g, labels, beta=90.0, tol=1e-12)
            worst = max(worst, float(np.max(np.abs(got - dense_walker(g, labels, 90.0)))))
    const_ok = all(np.array_equal(bilateral_filter(np.full((9, 7), v)), np.full((9, 7), v)) for v in (0.0, 0.3, 1.0))
    secs = time.perf_counter() - t0
    ok = otsu_ok == 1000 and worst < 1e-6 and const_ok and secs < 60
    record(7, ok, f"Otsu {otsu_ok}/1000 exact, walker max dev {worst:.1e}, bilateral constants {const_ok}, {secs:.0f}s")
    assert ok


def test_criterion_8_localization():
    models, train_secs = timed(train_channel_models, seed=SEED)
    res, secs = timed(localization_experiment, models, SpliceConfig(seed=SEED))
    ok = res["median_iou"] >= 0.3 and res["win_rate"] >= 0.8 and secs < 900
    record(8, ok, f"median IoU {res['median_iou']:.3f}, spliced > pristine in {res['win_rate']:.0%}, "
                  f"{secs:.0f}s detection + {train_secs:.0f}s model training")
    assert ok


def test_criterion_9_lstm(lstm_data, lstm_fast):
    pixels = lstm_experiment(LstmExperimentConfig(seed=SEED, inputs="pixels"), lstm_data)
    ok = lstm_fast.auc >= 0.80 and lstm_fast.auc > pixels.auc
    record(9, ok, f"p-map input AUC {lstm_fast.auc:.3f} vs raw pixels {pixels.auc:.3f} "
                  f"({len(lstm_fast.test_labels)} test patches)")
    assert ok


def test_criterion_10_determinism(bank, bank_sources, lstm_fast):
    up = bank["upsample"]
    again = bank_experiment(BankConfig(task="upsample", seed=SEED), bank_sources)
    bank_same = (model_bytes(again.model) == model_bytes(up.model) and again.mlp_auc == up.mlp_auc
                 and again.qda_auc == up.qda_auc and np.array_equal(again.test_scores, up.test_scores))
    rerun = lstm_experiment(LstmExperimentConfig(seed=SEED, inputs="fast"), lstm_dataset(LstmExperimentConfig(seed=SEED)))
    lstm_same = (model_bytes(rerun.model) == model_bytes(lstm_fast.model) and rerun.auc == lstm_fast.auc
                 and rerun.losses == lstm_fast.losses and np.array_equal(rerun.test_scores, lstm_fast.test_scores))
    ok = bank_same and lstm_same
    record(10, ok, f"bank rerun identical: {bank_same}; LSTM rerun identical (dataset regenerated): {lstm_same}")
    assert ok
