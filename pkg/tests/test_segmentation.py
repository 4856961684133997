import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import EDGE_FLOOR, brute_otsu, dense_walker
from resample_forensics.errors import DegenerateInputError, ParameterError, SeedingError, ShapeError
from resample_forensics.segmentation import (
    CHANNELS,
    HeatmapStack,
    Histogram,
    OtsuResult,
    SegmentationParams,
    bilateral_filter,
    binarize,
    channel_select,
    combine_or,
    confidence_score,
    find_modes,
    gaussian_filter,
    gray_mask,
    histogram,
    otsu_threshold,
    random_walker,
    segment_channels,
    solve_random_walker,
)


def random_labels(rng, h, w):
    labels = np.zeros(h * w, dtype=np.int8)
    k = rng.permutation(h * w)
    labels[k[0]] = 1
    labels[k[1]] = 2
    extra = rng.integers(0, max(1, h * w // 3))
    labels[k[2:2 + extra]] = rng.integers(1, 3, size=len(k[2:2 + extra]))
    return labels.reshape(h, w)


# -- bilateral ---------------------------------------------------------------------

def test_bilateral_fixes_constants_exactly():
    c = np.full((11, 13), 0.37)
    assert np.array_equal(bilateral_filter(c), c)


def test_bilateral_keeps_step_gaussian_blurs_it():
    step = np.zeros((9, 20))
    step[:, 10:] = 1.0
    bf = bilateral_filter(step, 2.0, 0.01)
    gb = gaussian_filter(step, 2.0)
    grad = lambda a: np.abs(np.diff(a, axis=1)).mean(axis=0)
    assert np.argmax(grad(bf)) == 9
    assert np.allclose(bf, step, atol=1e-12)
    assert grad(gb).max() < 0.5


def test_bilateral_sigma_errors():
    with pytest.raises(ParameterError):
        bilateral_filter(np.zeros((3, 3)), 0, 0.1)
    with pytest.raises(ParameterError):
        bilateral_filter(np.zeros((3, 3)), 1, -0.1)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.floats(0.3, 3), st.floats(0.01, 2), st.integers(0, 2**31))
def test_bilateral_stays_in_range(h, w, ss, sr, seed):
    g = np.random.default_rng(seed).random((h, w))
    out = bilateral_filter(g, ss, sr)
    assert out.min() >= g.min() and out.max() <= g.max()


# -- histogram / Otsu -----------------------------------------------------------------

def test_histogram_examples():
    assert histogram(np.zeros(10)).counts[0] == 10
    h = histogram(np.r_[np.zeros(5), np.ones(5)])
    assert h.counts[0] == 5 and h.counts[255] == 5
    v = np.random.default_rng(0).random(777)
    assert histogram(v).counts.sum() == 777


def test_otsu_two_deltas():
    c = np.zeros(256)
    c[50] = c[200] = 10
    r = otsu_threshold(Histogram(c, 256))
    assert r.threshold == 124 == brute_otsu([int(v) for v in c])
    assert r.eta == pytest.approx(1.0)
    assert find_modes(Histogram(c, 256), r.threshold) == (50, 200)


def test_otsu_bimodal_gaussians():
    rng = np.random.default_rng(1)
    h = histogram(np.r_[rng.normal(0.2, 0.02, 50000), rng.normal(0.8, 0.02, 50000)])
    r = otsu_threshold(h)
    assert abs(r.threshold - 128) <= 5 and r.eta > 0.9
    m1, m2 = find_modes(h, r.threshold)
    assert abs(m1 - 51) <= 3 and abs(m2 - 204) <= 3


def test_otsu_unimodal_gaussian_separability():
    # a single Gaussian splits at its mean with eta = 2 / pi, not below 0.5
    v = np.clip(np.random.default_rng(0).normal(0.5, 0.1, 200000), 0, 1)
    r = otsu_threshold(histogram(v))
    assert r.eta == pytest.approx(2 / math.pi, abs=0.005)
    assert abs(r.threshold - 127) <= 1


def test_otsu_single_bin_is_degenerate():
    c = np.zeros(256)
    c[3] = 9
    with pytest.raises(DegenerateInputError):
        otsu_threshold(Histogram(c, 256))


def test_otsu_matches_exact_brute_force_on_1000_histograms():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        counts = rng.integers(0, 50, size=256) * (rng.random(256) < rng.uniform(0.02, 1))
        if np.count_nonzero(counts) < 2:
            counts[[0, 255]] = 1
        assert otsu_threshold(Histogram(counts.astype(float), 256)).threshold == brute_otsu(counts.tolist())


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 1000), min_size=256, max_size=256).filter(lambda c: sum(v > 0 for v in c) >= 2))
def test_otsu_property(counts):
    r = otsu_threshold(Histogram(np.array(counts, dtype=float), 256))
    assert r.threshold == brute_otsu(counts)
    assert 0 <= r.eta <= 1
    assert sum(r.masses) == pytest.approx(1.0)


def test_channel_select_rule():
    assert channel_select(OtsuResult(10, 1.0, (0.5, 0.5), 1.0))
    assert not channel_select(OtsuResult(10, 0.3, (0.5, 0.5), 1.0))
    assert not channel_select(OtsuResult(10, 0.9, (0.005, 0.995), 1.0))


def test_find_modes_ties_go_to_threshold():
    c = np.zeros(256)
    c[10:20] = 5
    c[200] = 3
    assert find_modes(Histogram(c, 256), 100) == (19, 200)
    c = np.zeros(256)
    c[10] = 3
    with pytest.raises(DegenerateInputError):
        find_modes(Histogram(c, 256), 100)


# -- random walker ---------------------------------------------------------------------

def test_three_pixel_chain():
    p = solve_random_walker(np.full((1, 3), 0.5), np.array([[1, 0, 2]]))
    assert p[0, 1] == pytest.approx(0.5, abs=1e-9)
    assert p[0, 0] == 0 and p[0, 2] == 1


def test_two_regions_recovered():
    g = np.full((12, 12), 0.1)
    g[:, 6:] = 0.9
    labels = np.zeros(g.shape, dtype=np.int8)
    labels[5, 2] = 1
    labels[7, 9] = 2
    mask = binarize(solve_random_walker(g, labels))
    assert np.array_equal(mask, g > 0.5)


def test_walker_needs_both_seeds():
    with pytest.raises(SeedingError):
        solve_random_walker(np.zeros((3, 3)), np.array([[1, 0, 0], [0, 0, 0], [0, 0, 1]]))


def test_walker_modes_interface():
    g = np.full((6, 6), 0.5)
    g[0, 0] = 0.0
    g[5, 5] = 1.0
    p = random_walker(g, 64, 192)
    assert p[0, 0] == 0 and p[5, 5] == 1
    assert 0 < p[2, 3] < 1


def test_walker_matches_dense_solve_on_all_small_grids():
    rng = np.random.default_rng(3)
    for h in range(1, 9):
        for w in range(1, 9):
            if h * w < 3:
                continue
            g = rng.random((h, w))
            labels = random_labels(rng, h, w)
            got = solve_random_walker(g, labels, beta=90.0, tol=1e-12)
            assert np.max(np.abs(got - dense_walker(g, labels, 90.0))) < 1e-6, (h, w)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 8), st.integers(2, 8), st.integers(0, 2**31), st.floats(1, 200))
def test_walker_harmonic_and_complementary(h, w, seed, beta):
    rng = np.random.default_rng(seed)
    g = rng.random((h, w))
    labels = random_labels(rng, h, w)
    p2 = solve_random_walker(g, labels, beta, tol=1e-12)
    swapped = np.where(labels == 0, 0, 3 - labels)
    p1 = solve_random_walker(g, swapped, beta, tol=1e-12)
    assert p2.min() >= 0 and p2.max() <= 1
    assert np.allclose(p1 + p2, 1.0, atol=1e-6)
    for y, x in zip(*np.nonzero(labels == 0)):
        nb = [(y + dy, x + dx) for dy, dx in ((0, 1), (1, 0), (0, -1), (-1, 0)) if 0 <= y + dy < h and 0 <= x + dx < w]
        wts = [math.exp(-beta * (g[y, x] - g[q]) ** 2) + EDGE_FLOOR for q in nb]
        avg = sum(wt * p2[q] for wt, q in zip(wts, nb)) / sum(wts)
        assert abs(p2[y, x] - avg) < 1e-6


# -- fusion ------------------------------------------------------------------------

def test_or_examples():
    m = np.random.default_rng(4).random((5, 5)) > 0.5
    assert np.array_equal(combine_or([m]), m)
    assert combine_or([m, ~m]).all()
    with pytest.raises(ShapeError):
        combine_or([m, m[:4]])
    with pytest.raises(ParameterError):
        combine_or([])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**31))
def test_or_order_free_and_covering(k, seed):
    rng = np.random.default_rng(seed)
    masks = [rng.random((4, 6)) > 0.7 for _ in range(k)]
    ref = combine_or(masks)
    assert np.array_equal(combine_or([masks[i] for i in rng.permutation(k)]), ref)
    for m in masks:
        assert ref.sum() >= m.sum()


def test_confidence_examples():
    assert confidence_score(np.array([0.0, 0.5, 1.0, 0.0])) == 0.75
    assert confidence_score(np.zeros((3, 3))) == 0.0
    assert confidence_score(np.ones((3, 3))) == 1.0
    assert np.array_equal(gray_mask([], (2, 3)), np.zeros((2, 3)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 4), st.integers(0, 2**31))
def test_gray_mask_and_score_bounded(k, seed):
    rng = np.random.default_rng(seed)
    gm = gray_mask([rng.random((5, 5)) for _ in range(k)], (5, 5))
    assert gm.min() >= 0 and gm.max() <= 1
    assert 0 <= confidence_score(gm) <= 1


# -- driver ------------------------------------------------------------------------

def test_segment_channels_selects_bimodal_only():
    rng = np.random.default_rng(5)
    bimodal = np.full((16, 16), 0.05) + 0.01 * rng.random((16, 16))
    bimodal[4:10, 4:10] = 0.95
    flat_noise = rng.random((16, 16))
    res = segment_channels({"upsample": bimodal, "shear": flat_noise},
                           SegmentationParams(eta_min=0.9))
    assert res.selected == ["upsample"]
    assert np.array_equal(res.mask, bimodal > 0.5)
    assert res.score > 0.9


def test_segment_channels_none_selected():
    res = segment_channels({"upsample": np.full((6, 6), 0.2)})
    assert res.selected == [] and not res.mask.any() and res.score == 0.0


def test_heatmap_stack_validation():
    assert HeatmapStack(np.zeros((6, 2, 2))).names == CHANNELS
    with pytest.raises(ShapeError):
        HeatmapStack(np.zeros((5, 2, 2)))
    with pytest.raises(ParameterError):
        HeatmapStack(np.full((6, 2, 2), 1.5))
