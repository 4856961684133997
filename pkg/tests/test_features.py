import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from resample_forensics.errors import DegenerateInputError, DimensionError, ParameterError
from resample_forensics.experiments import fixed_point_image, random_predictor, upscale_exact
from resample_forensics.features import (
    DEFAULT_PREDICTOR,
    PEAK_SENTINEL,
    em_pmap,
    fast_pmap,
    pmap_spectrum,
    radon_angles,
    radon_features,
    radon_projection,
    radon_resampling_feature,
    read_feature_cache,
    spectral_peak_ratio,
    write_feature_cache,
)
from resample_forensics.imaging import affine_resample


def linear_up2(x):
    """Grid-aligned 2x linear interpolation: originals on even indices."""
    h, w = x.shape
    a = np.zeros((h, 2 * w - 1))
    a[:, ::2] = x
    a[:, 1::2] = (x[:, :-1] + x[:, 1:]) / 2
    b = np.zeros((2 * h - 1, 2 * w - 1))
    b[::2] = a
    b[1::2] = (a[:-1] + a[1:]) / 2
    return b


def central(proj, n):
    d = len(proj)
    lo = (d - n) // 2
    return proj[lo:lo + n]


# -- radon ---------------------------------------------------------------------

def test_projection_axis_aligned():
    x = np.random.default_rng(0).random((16, 16))
    p0 = radon_projection(x, 0)
    p90 = radon_projection(x, 90)
    assert np.allclose(central(p0, 16), x.sum(axis=0), atol=1e-12)
    assert np.allclose(np.delete(p0, np.s_[(len(p0) - 16) // 2:(len(p0) + 16) // 2]), 0)
    assert np.allclose(central(p90, 16), x.sum(axis=1), atol=1e-12)


@pytest.mark.parametrize("angle", [22.5, 45.0, 67.5, 131.0])
def test_projection_conserves_mass(angle):
    x = np.random.default_rng(1).random((64, 64))
    assert abs(radon_projection(x, angle).sum() - x.sum()) / x.sum() < 0.01


def test_projection_needs_square():
    with pytest.raises(DimensionError):
        radon_projection(np.zeros((8, 9)), 0)


def test_feature_shape_and_zero_on_constant():
    f = radon_resampling_feature(np.full((64, 64), 0.3))
    assert f.values.shape == (512,)
    assert np.all(f.values == 0)


def test_feature_wrong_size():
    with pytest.raises(DimensionError):
        radon_resampling_feature(np.zeros((32, 32)))


def test_period_two_peak():
    # period-2 correlations sit at bin 2 * 64 / 2 = 64 for the axis-aligned projections
    rng = np.random.default_rng(0)
    for _ in range(5):
        u = linear_up2(rng.random((40, 40)))[4:68, 4:68]
        f = radon_resampling_feature(u)
        for a in (0, 4):
            assert int(np.argmax(f.block(a))) + 1 == 64


def test_feature_deterministic_under_identity_warp():
    x = np.random.default_rng(2).random((64, 64))
    assert np.array_equal(radon_features(x), radon_features(affine_resample(x, np.eye(2))))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31), st.floats(-0.4, 0.4))
def test_feature_ignores_offset(seed, c):
    x = np.random.default_rng(seed).random((32, 32)) * 0.5 + 0.25
    assert np.allclose(radon_features(x), radon_features(x + c), atol=1e-9)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 3))
def test_quarter_turn_permutes_blocks(seed, turns):
    x = np.random.default_rng(seed).random((64, 64))
    f0 = radon_features(x)[0].reshape(8, 64)
    fr = radon_features(np.rot90(x, -turns))[0].reshape(8, 64)
    assert np.max(np.abs(np.roll(f0, 4 * turns, axis=0) - fr)) < 1e-6


def test_angles():
    assert np.allclose(radon_angles(8), np.arange(8) * 22.5)


def test_feature_cache_round_trip(tmp_path):
    f = np.random.default_rng(3).random((5, 16)).astype(np.float32)
    write_feature_cache(tmp_path / "f.rsft", f, 2, 8)
    back, a, b = read_feature_cache(tmp_path / "f.rsft")
    assert (a, b) == (2, 8)
    assert np.array_equal(back, f.astype(np.float64))
    raw = (tmp_path / "f.rsft").read_bytes()
    assert raw[:4] == b"RSFT"
    (tmp_path / "g.rsft").write_bytes(raw[:-4])
    with pytest.raises(ParameterError):
        read_feature_cache(tmp_path / "g.rsft")


# -- fast p-map -------------------------------------------------------------------

def test_fast_pmap_constant_is_one():
    assert np.allclose(fast_pmap(np.full((9, 9), 0.7)), 1.0)


def test_fast_pmap_row_upsample():
    rng = np.random.default_rng(4)
    x = rng.random((20, 24))
    up = np.zeros((39, 24))
    up[::2] = x
    up[1::2] = (x[:-1] + x[1:]) / 2
    p = fast_pmap(up, sigma=0.1)
    inner = p[1:-1, 1:-1]
    # interior rows 1, 3, ... of ``up`` are interpolated; in ``inner`` they land on even indices
    assert np.allclose(inner[0::2], 1.0, atol=1e-12)
    assert inner[1::2].mean() < 0.9


def test_fast_pmap_monotone_in_residual():
    img = np.zeros((5, 5))
    img[2, 2] = 0.1
    a = fast_pmap(img, sigma=0.5)[2, 2]
    img[2, 2] = 0.4
    assert fast_pmap(img, sigma=0.5)[2, 2] < a


def test_fast_pmap_sigma_positive():
    with pytest.raises(ParameterError):
        fast_pmap(np.zeros((5, 5)), sigma=0)


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 20), st.integers(3, 20), st.floats(0.01, 5), st.integers(0, 2**31))
def test_pmaps_in_unit_interval(h, w, sigma, seed):
    x = np.random.default_rng(seed).random((h, w))
    p = fast_pmap(x, sigma=sigma)
    assert p.shape == x.shape
    assert p.min() >= 0 and p.max() <= 1


# -- EM -----------------------------------------------------------------------------

def test_em_recovers_fixed_point_predictor():
    rng = np.random.default_rng(9)
    alpha = random_predictor(rng)
    img = fixed_point_image(alpha, 40, rng)
    inner = img[1:-1, 1:-1]
    pred = sum(alpha[1 + dy, 1 + dx] * img[1 + dy:39 + dy, 1 + dx:39 + dx]
               for dy in (-1, 0, 1) for dx in (-1, 0, 1))
    assert np.allclose(inner, pred, atol=1e-10)
    _, state = em_pmap(img, max_iters=50, eps=1e-9)
    assert np.max(np.abs(state.kernel - alpha)) < 1e-3
    assert state.kernel[1, 1] == 0


def test_em_single_iteration_with_huge_eps():
    x = np.random.default_rng(5).random((24, 24))
    _, state = em_pmap(x, max_iters=50, eps=1e300)
    assert state.iterations == 1


def test_em_constant_image_is_degenerate():
    with pytest.raises(DegenerateInputError, match="singular"):
        em_pmap(np.full((12, 12), 0.5))


def test_em_parameter_errors():
    with pytest.raises(ParameterError):
        em_pmap(np.zeros((8, 8)), max_iters=0)
    with pytest.raises(ParameterError):
        em_pmap(np.zeros((8, 8)), eps=0)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**31))
def test_em_weighted_residual_never_increases(seed):
    x = np.random.default_rng(seed).random((32, 32))
    x = upscale_exact(x, 1.3)
    p, state = em_pmap(x, max_iters=10)
    assert p.min() >= 0 and p.max() <= 1
    for before, after in state.history:
        assert after <= before + 1e-9


def test_em_noise_has_weaker_peak_than_upsampled_noise():
    noise = np.random.default_rng(6).random((96, 96))
    up = upscale_exact(noise, 1.5)
    r_noise = spectral_peak_ratio(pmap_spectrum(em_pmap(noise)[0]))
    r_up = spectral_peak_ratio(pmap_spectrum(em_pmap(up)[0]))
    assert r_noise < r_up


# -- spectra ------------------------------------------------------------------------

def test_spectrum_of_constant_is_zero():
    assert np.all(pmap_spectrum(np.full((8, 8), 0.4)) == 0)


def test_stripe_spectrum_peak_at_nyquist():
    p = np.tile(np.array([1.0, 0.2])[:, None], (8, 16))  # period 2 along rows
    s = pmap_spectrum(p)
    assert np.unravel_index(np.argmax(s), s.shape) == (8, 0)
    assert np.count_nonzero(s > 1e-9) == 1


def test_peak_ratio_rules():
    assert spectral_peak_ratio(np.zeros((8, 8))) == 0.0
    s = np.zeros((8, 8))
    s[4, 4] = 2.0
    assert spectral_peak_ratio(s) == PEAK_SENTINEL
    s = np.zeros((8, 8))
    s[0, 1] = 5.0  # inside the DC exclusion zone
    assert spectral_peak_ratio(s) == 0.0


def test_peak_ratio_matches_direct_oracle():
    yy, xx = np.mgrid[0:32, 0:32]
    p = 0.5 + 0.4 * np.cos(2 * np.pi * (3 * yy + 5 * xx) / 32) + 0.01 * np.random.default_rng(7).random((32, 32))
    s = pmap_spectrum(p)
    keep = [(y, x) for y in range(32) for x in range(32) if min(y, 32 - y) > 1 or min(x, 32 - x) > 1]
    expected = max(s[y, x] for y, x in keep) / np.median(s)
    assert spectral_peak_ratio(s) == pytest.approx(expected, rel=1e-12)


def test_upsampling_raises_peak_ratio():
    from resample_forensics.dataset import synthetic_sources

    img = synthetic_sources(1, 128, seed=3)[0]
    r0 = spectral_peak_ratio(pmap_spectrum(fast_pmap(img)))
    r1 = spectral_peak_ratio(pmap_spectrum(fast_pmap(upscale_exact(img, 1.5))))
    assert r1 >= 3 * r0


def test_default_predictor_sums_to_one():
    assert DEFAULT_PREDICTOR.sum() == pytest.approx(1.0)
    assert DEFAULT_PREDICTOR[1, 1] == 0
