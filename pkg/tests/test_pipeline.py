import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from resample_forensics.errors import DimensionError, EvaluationError, ParameterError, ShapeError
from resample_forensics.imaging import PatchGrid
from resample_forensics.nnet import init_lstm, init_mlp, save_model
from resample_forensics.pipeline import (
    DETECT_ETA_MIN,
    MODEL_SUFFIX,
    DetectConfig,
    default_workers,
    detect,
    evaluate_roc,
    iou,
    load_channel_models,
    localize,
    lstm_detect,
    lstm_inputs,
    pixel_f1,
    upsample_heatmap,
)
from resample_forensics.segmentation import CHANNELS, HeatmapStack


@pytest.fixture(scope="module")
def models():
    rng = np.random.default_rng(0)
    return {c: init_mlp([512, 6, 1], rng) for c in CHANNELS}


@pytest.fixture(scope="module")
def image():
    return np.random.default_rng(1).random((128, 128))


# -- detection --------------------------------------------------------------------

def test_detect_shapes(models, image):
    res = detect(image, models)
    assert res.heatmaps.data.shape == (6, 9, 9)
    assert res.pixel_maps.shape == (6, 128, 128)
    assert res.mask.shape == (128, 128) and res.mask.dtype == bool
    assert 0 <= res.score <= 1
    json.dumps(res.summary())


def test_detect_deterministic_and_worker_free(models, image):
    a = detect(image, models)
    b = detect(image, models, DetectConfig(workers=3, chunk=10))
    assert np.array_equal(a.heatmaps.data, b.heatmaps.data)
    assert np.array_equal(a.mask, b.mask)
    assert a.score == b.score


def test_detect_errors(models):
    with pytest.raises(DimensionError):
        detect(np.zeros((63, 200)), models)
    with pytest.raises(ParameterError):
        detect(np.zeros((64, 64)), {"upsample": models["upsample"]})


def test_detect_config_defaults_and_errors():
    assert DetectConfig().segmentation.eta_min == DETECT_ETA_MIN == 0.95
    for bad in (dict(stride=0), dict(patch_size=4), dict(workers=0), dict(segment_at="image")):
        with pytest.raises(ParameterError):
            DetectConfig(**bad)


def planted_stack(rows, cols, lo, hi):
    data = np.zeros((6, rows, cols))
    k = CHANNELS.index("upsample")
    data[k] = 0.05
    data[k, lo:hi, lo:hi] = 0.95
    return HeatmapStack(data, 64, 8)


@pytest.mark.parametrize("segment_at", ["grid", "pixel"])
def test_localize_planted_region(segment_at):
    res = localize(planted_stack(17, 17, 5, 12), (192, 192), DetectConfig(segment_at=segment_at))
    assert res.selected == ["upsample"]
    assert res.mask[96, 96] and not res.mask[20, 20] and not res.mask[170, 170]
    truth = np.zeros((192, 192), dtype=bool)
    truth[68:124, 68:124] = True  # patch centers 71.5 .. 119.5 plus half a stride
    assert iou(res.mask, truth) > 0.7


def test_localize_flat_stack_selects_nothing():
    res = localize(HeatmapStack(np.full((6, 9, 9), 0.3), 64, 8), (128, 128))
    assert res.selected == [] and not res.mask.any() and res.score == 0.0


# -- heatmap upsampling ----------------------------------------------------------------

def test_upsample_hits_grid_values_at_centers():
    grid = PatchGrid.for_image(100, 90, 65, 5)  # odd patch: integer centers
    g = np.random.default_rng(2).random((grid.rows, grid.cols))
    up = upsample_heatmap(g, grid, (100, 90))
    cy, cx = grid.centers()
    assert np.allclose(up[np.ix_(cy.astype(int), cx.astype(int))], g)
    # halfway between two centers is the mean
    assert up[int(cy[0]) + 2, int(cx[0])] == pytest.approx(0.6 * g[0, 0] + 0.4 * g[1, 0])
    # beyond the outer centers values are held
    assert np.allclose(up[0, int(cx[0])], g[0, 0])


def test_upsample_constant_and_shape_error():
    grid = PatchGrid.for_image(128, 128)
    assert np.allclose(upsample_heatmap(np.full((9, 9), 0.4), grid, (128, 128)), 0.4)
    with pytest.raises(ShapeError):
        upsample_heatmap(np.zeros((8, 9)), grid, (128, 128))


def test_upsample_single_cell():
    grid = PatchGrid.for_image(64, 64)
    assert np.allclose(upsample_heatmap(np.array([[0.7]]), grid, (64, 64)), 0.7)


# -- models on disk ------------------------------------------------------------------

def test_channel_models_round_trip(tmp_path, models, image):
    for name, m in models.items():
        save_model(tmp_path / f"{name}{MODEL_SUFFIX}", m)
    loaded = load_channel_models(tmp_path)
    assert np.array_equal(detect(image, loaded).heatmaps.data, detect(image, models).heatmaps.data)
    (tmp_path / f"shear{MODEL_SUFFIX}").unlink()
    with pytest.raises(ParameterError, match="shear"):
        load_channel_models(tmp_path)


def test_default_workers_env(monkeypatch):
    monkeypatch.setenv("RESAMPLE_FORENSICS_THREADS", "3")
    assert default_workers() == 3
    monkeypatch.setenv("RESAMPLE_FORENSICS_THREADS", "zero")
    with pytest.raises(ParameterError):
        default_workers()
    monkeypatch.setenv("RESAMPLE_FORENSICS_THREADS", "0")
    with pytest.raises(ParameterError):
        default_workers()
    monkeypatch.delenv("RESAMPLE_FORENSICS_THREADS")
    assert default_workers() >= 1


# -- LSTM pipeline ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_lstm():
    return init_lstm(np.random.default_rng(3), hidden=4, n_layers=2)


def test_lstm_detect_grid(small_lstm):
    img = np.random.default_rng(4).random((96, 80))
    p = lstm_detect(img, small_lstm)
    assert p.shape == (5, 3)
    assert p.min() >= 0 and p.max() <= 1
    assert np.array_equal(p, lstm_detect(img, small_lstm, chunk=4))
    assert lstm_detect(img, small_lstm, stride=16).shape == (3, 2)
    with pytest.raises(DimensionError):
        lstm_detect(np.zeros((63, 100)), small_lstm)


@pytest.mark.parametrize("kind", ["fast", "pixels"])
def test_lstm_inputs_standardized(kind):
    x = np.random.default_rng(5).random((3, 16, 16))
    z = lstm_inputs(x, kind)
    assert z.shape == (3, 16, 16)
    assert np.allclose(z.mean(axis=(1, 2)), 0, atol=1e-12)
    assert np.allclose(z.std(axis=(1, 2)), 1, atol=1e-6)
    assert lstm_inputs(x[0], kind).shape == (1, 16, 16)


def test_lstm_inputs_unknown():
    with pytest.raises(ParameterError):
        lstm_inputs(np.zeros((1, 8, 8)), "wavelet")


# -- ROC -------------------------------------------------------------------------------

def test_roc_examples():
    y = [0, 0, 1, 1]
    assert evaluate_roc([0.1, 0.2, 0.8, 0.9], y).auc == 1.0
    assert evaluate_roc([0.9, 0.8, 0.2, 0.1], y).auc == 0.0
    assert evaluate_roc([0.5] * 4, y).auc == 0.5
    roc = evaluate_roc([0.1, 0.4, 0.35, 0.8], y)
    assert roc.auc == 0.75
    assert roc.fpr[0] == roc.tpr[0] == 0 and roc.fpr[-1] == roc.tpr[-1] == 1
    assert roc.to_csv().startswith("threshold,fpr,tpr\ninf,0.0,0.0\n")


def test_roc_errors():
    with pytest.raises(EvaluationError):
        evaluate_roc([0.1, 0.2], [1, 1])
    with pytest.raises(EvaluationError):
        evaluate_roc([np.nan, 0.2], [0, 1])
    with pytest.raises(ShapeError):
        evaluate_roc([0.1, 0.2, 0.3], [0, 1])


def pairwise_auc(s, y):
    pos = [a for a, t in zip(s, y) if t]
    neg = [a for a, t in zip(s, y) if not t]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.booleans()), min_size=2, max_size=40)
       .filter(lambda r: 0 < sum(t for _, t in r) < len(r)))
def test_roc_matches_pairwise_count(rows):
    s = [v / 6 for v, _ in rows]
    y = [t for _, t in rows]
    roc = evaluate_roc(s, y)
    assert roc.auc == pytest.approx(pairwise_auc(s, y), abs=1e-12)
    assert evaluate_roc([-v for v in s], y).auc == pytest.approx(1 - roc.auc, abs=1e-15)
    assert np.all(np.diff(roc.fpr) >= 0) and np.all(np.diff(roc.tpr) >= 0)


# -- mask metrics --------------------------------------------------------------------

def test_mask_metric_examples():
    a = np.zeros((4, 4), dtype=bool)
    b = a.copy()
    assert iou(a, b) == 1.0 and pixel_f1(a, b) == 1.0
    a[0, :2] = True
    b[0, 1:3] = True
    assert iou(a, b) == pytest.approx(1 / 3)
    assert pixel_f1(a, b) == pytest.approx(0.5)
    assert iou(a, ~a) == 0.0
    with pytest.raises(ShapeError):
        iou(a, a[:3])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.05, 0.95))
def test_f1_is_monotone_in_iou(seed, frac):
    rng = np.random.default_rng(seed)
    a, b = rng.random((6, 6)) < frac, rng.random((6, 6)) < frac
    j = iou(a, b)
    assert pixel_f1(a, b) == pytest.approx(2 * j / (1 + j))
    assert iou(a, b) == iou(b, a)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([np.exp, np.arctan, lambda v: 3 * v - 7, lambda v: v ** 3]))
def test_auc_invariant_under_monotone_maps(seed, f):
    rng = np.random.default_rng(seed)
    s = np.round(rng.normal(size=30), 1)
    y = np.r_[np.ones(15), np.zeros(15)].astype(int)
    assert evaluate_roc(f(s), y).auc == evaluate_roc(s, y).auc
