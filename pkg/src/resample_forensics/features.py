"""Resampling trace extractors.

Two families live here:

* the Radon/FFT periodicity feature computed on ``sqrt(|Laplacian|)`` of a
  patch (dense detection pipeline), and
* probability maps (p-maps) of linear-predictor correlation, either with a
  fixed predictor (``fast_pmap``) or with predictor weights estimated by
  expectation maximization (``em_pmap``).
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateInputError, DimensionError, ParameterError
from .imaging import conv3x3

DEFAULT_PREDICTOR = np.array([[-0.25, 0.5, -0.25], [0.5, 0.0, 0.5], [-0.25, 0.5, -0.25]])
DEFAULT_ANGLES = 8
FEATURE_EPS = 1e-8
PEAK_SENTINEL = 1e12

# the 8 neighbor offsets of a 3x3 predictor, in row-major kernel order
_NEIGHBORS = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]


def check_predictor(kernel) -> np.ndarray:
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.shape != (3, 3):
        raise DimensionError(f"predictor must be 3x3, got {kernel.shape}")
    if kernel[1, 1] != 0.0:
        raise ParameterError("predictor center weight must be 0")
    return kernel


def _laplacian_sqrt(patches: np.ndarray) -> np.ndarray:
    """sqrt(|4-neighbor Laplacian|) over the last two axes, mirror borders.

    Written as a sum of neighbor differences so that constant regions give
    exactly zero (the square root would otherwise amplify roundoff).
    """
    p = np.pad(patches, [(0, 0)] * (patches.ndim - 2) + [(1, 1), (1, 1)], mode="reflect")
    c = p[..., 1:-1, 1:-1]
    lap = (p[..., :-2, 1:-1] - c) + (p[..., 2:, 1:-1] - c) + (p[..., 1:-1, :-2] - c) + (p[..., 1:-1, 2:] - c)
    return np.sqrt(np.abs(lap))


# ---------------------------------------------------------------------------
# Radon projections


def projection_length(size: int) -> int:
    """Side of the zero-padded canvas holding the patch at any rotation."""
    d = math.ceil(size * math.sqrt(2.0))
    return d + ((d - size) % 2)


@lru_cache(maxsize=64)
def radon_operator(size: int, angle: float) -> sp.csr_matrix:
    """Sparse linear map from a flattened ``size x size`` patch to its projection.

    The patch sits centered in a zero canvas of side ``projection_length(size)``,
    is rotated counter-clockwise by ``angle`` and summed along columns. Angles
    are split into exact quarter turns plus a bilinear residual rotation, so
    projections at ``angle`` and ``angle + 90`` are related exactly.
    """
    if not 0.0 <= angle < 180.0:
        raise ParameterError(f"angle must be in [0, 180), got {angle}")
    d = projection_length(size)
    pad = (d - size) // 2
    quarter = int(angle // 90.0)
    resid = angle - 90.0 * quarter

    c = (d - 1) / 2.0
    oy, ox = np.meshgrid(np.arange(d) - c, np.arange(d) - c, indexing="ij")
    out_col = np.broadcast_to(np.arange(d), (d, d))
    if resid == 0.0:
        taps = [(oy + c, ox + c, np.ones((d, d)))]
    else:
        th = math.radians(resid)
        cs, sn = math.cos(th), math.sin(th)
        # inverse map of a counter-clockwise display rotation (y down)
        sx = cs * ox - sn * oy + c
        sy = sn * ox + cs * oy + c
        y0 = np.floor(sy)
        x0 = np.floor(sx)
        ty = sy - y0
        tx = sx - x0
        taps = [
            (y0, x0, (1 - ty) * (1 - tx)),
            (y0, x0 + 1, (1 - ty) * tx),
            (y0 + 1, x0, ty * (1 - tx)),
            (y0 + 1, x0 + 1, ty * tx),
        ]

    rows, cols, vals = [], [], []
    for yy, xx, wgt in taps:
        py = yy.astype(np.int64) - pad
        px = xx.astype(np.int64) - pad
        ok = (py >= 0) & (py < size) & (px >= 0) & (px < size) & (wgt != 0)
        rows.append(out_col[ok])
        cols.append(py[ok] * size + px[ok])
        vals.append(wgt[ok])
    op = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(d, size * size)
    ).tocsr()

    if quarter:
        # column m of op reads pixel perm[m] of the original patch
        perm = np.rot90(np.arange(size * size).reshape(size, size), quarter).ravel()
        inv = np.empty_like(perm)
        inv[perm] = np.arange(perm.size)
        op = op[:, inv]
    return op


def radon_projection(img, angle: float) -> np.ndarray:
    """Line-integral projection of a square image at ``angle`` degrees.

    The result has ``projection_length(n)`` bins; at 0 degrees the central
    ``n`` bins are the column sums, at 90 degrees the row sums.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] != img.shape[1]:
        raise DimensionError(f"radon projection needs a square image, got {img.shape}")
    return radon_operator(img.shape[0], float(angle)) @ img.ravel()


def radon_angles(count: int = DEFAULT_ANGLES) -> np.ndarray:
    return np.arange(count) * (180.0 / count)


@lru_cache(maxsize=8)
def _stacked_operator(size: int, n_angles: int) -> sp.csr_matrix:
    return sp.vstack([radon_operator(size, float(a)) for a in radon_angles(n_angles)]).tocsr()


@lru_cache(maxsize=8)
def _footprint_mass(size: int, n_angles: int) -> np.ndarray:
    """Total projected mass of an all-ones patch at each angle, shape ``(n_angles, 1)``."""
    op = _stacked_operator(size, n_angles)
    d = projection_length(size)
    return np.asarray(op.sum(axis=1)).reshape(n_angles, d).sum(axis=1, keepdims=True)


@dataclass
class ResamplingFeature:
    values: np.ndarray
    n_angles: int
    n_bins: int
    origin: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.values.shape != (self.n_angles * self.n_bins,):
            raise DimensionError("feature length must equal angles x bins")

    def block(self, angle_index: int) -> np.ndarray:
        return self.values[angle_index * self.n_bins : (angle_index + 1) * self.n_bins]


def radon_features(patches, n_angles: int = DEFAULT_ANGLES) -> np.ndarray:
    """Batched resampling features, shape ``(n, n_angles * size)``.

    For each angle the projection of ``sqrt(|Laplacian|)`` is mean-removed,
    zero padded to ``2 * size``, transformed, and bins ``1..size`` of the
    magnitude are kept, normalized by the projection's total mass.
    """
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim == 2:
        patches = patches[None]
    if patches.ndim != 3 or patches.shape[1] != patches.shape[2]:
        raise DimensionError(f"patches must be square, got {patches.shape[1:]}")
    n, size, _ = patches.shape
    if size < 3:
        raise DimensionError("patch is too small")
    resid = _laplacian_sqrt(patches).reshape(n, size * size)
    d = projection_length(size)
    op = _stacked_operator(size, n_angles)
    mean = resid.mean(axis=1, keepdims=True)
    # removing the mean before projecting subtracts mean * line length from
    # every bin, so the footprint envelope does not leak into low frequencies
    centered = (op @ (resid - mean).T).T.reshape(n, n_angles, d)
    mass = np.abs(centered.sum(axis=2, keepdims=True) + mean[:, :, None] * _footprint_mass(size, n_angles))
    spec = np.abs(np.fft.rfft(centered, n=2 * size, axis=2))[:, :, 1 : size + 1]
    return (spec / (mass + FEATURE_EPS)).reshape(n, n_angles * size)


def radon_resampling_feature(patch, patch_size: int = 64, n_angles: int = DEFAULT_ANGLES,
                             origin: tuple[int, int] = (0, 0)) -> ResamplingFeature:
    patch = np.asarray(patch, dtype=np.float64)
    if patch.shape != (patch_size, patch_size):
        raise DimensionError(f"expected a {patch_size}x{patch_size} patch, got {patch.shape}")
    return ResamplingFeature(radon_features(patch, n_angles)[0], n_angles, patch_size, origin)


# ---------------------------------------------------------------------------
# probability maps


def fast_pmap(img, kernel=DEFAULT_PREDICTOR, sigma: float = 1.0) -> np.ndarray:
    """p = exp(-e^2 / sigma^2) of the fixed linear predictor residual e."""
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    img = np.asarray(img, dtype=np.float64)
    kernel = check_predictor(kernel)
    e = img - conv3x3(img, kernel)
    return np.exp(-(e * e) / (sigma * sigma))


def fast_pmaps(patches, kernel=DEFAULT_PREDICTOR, sigma: float = 1.0) -> np.ndarray:
    """``fast_pmap`` over a stack of patches ``(n, h, w)``."""
    return np.stack([fast_pmap(p, kernel, sigma) for p in np.asarray(patches, dtype=np.float64)])


@dataclass
class EmState:
    kernel: np.ndarray
    sigma: float
    iterations: int
    converged: bool = False
    # (weighted residual sum before, after) each M-step, same weights
    history: list[tuple[float, float]] = field(default_factory=list)


def _design(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    h, w = img.shape
    y = img[1:-1, 1:-1].ravel()
    cols = [img[1 + dy : h - 1 + dy, 1 + dx : w - 1 + dx].ravel() for dy, dx in _NEIGHBORS]
    return np.stack(cols, axis=1), y


def _kernel_from(alpha: np.ndarray) -> np.ndarray:
    k = np.zeros((3, 3))
    for a, (dy, dx) in zip(alpha, _NEIGHBORS):
        k[1 + dy, 1 + dx] = a
    return k


def _posterior(e: np.ndarray, sigma: float, p0: float) -> np.ndarray:
    dens = np.exp(-(e * e) / (2.0 * sigma * sigma)) / (sigma * math.sqrt(2.0 * math.pi))
    return dens / (dens + p0)


def em_pmap(img, max_iters: int = 50, eps: float = 1e-6, init_kernel=DEFAULT_PREDICTOR,
            sigma_floor: float = 1e-6) -> tuple[np.ndarray, EmState]:
    """Expectation-maximization p-map with an estimated 3x3 predictor.

    E-step: posterior of the correlated class, Gaussian residual density
    against a uniform density over the current residual range. M-step:
    weighted least squares for the predictor over interior pixels, then the
    weighted residual deviation. Stops once no weight moves by ``eps``.
    """
    if max_iters < 1:
        raise ParameterError("max_iters must be >= 1")
    if not eps > 0:
        raise ParameterError("eps must be positive")
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < 3:
        raise DimensionError(f"image of shape {img.shape} is too small for a 3x3 predictor")

    x, y = _design(img)
    alpha = np.array([check_predictor(init_kernel)[1 + dy, 1 + dx] for dy, dx in _NEIGHBORS])
    e = y - x @ alpha
    sigma = max(float(np.std(e)), sigma_floor)
    state = EmState(_kernel_from(alpha), sigma, 0)

    for it in range(1, max_iters + 1):
        p0 = 1.0 / max(float(e.max() - e.min()), sigma_floor)
        w = _posterior(e, sigma, p0)
        xtw = x.T * w
        a = xtw @ x
        if np.linalg.matrix_rank(a) < a.shape[0]:
            raise DegenerateInputError(
                "singular normal equations: neighborhoods are linearly dependent (e.g. constant image)"
            )
        new_alpha = np.linalg.solve(a, xtw @ y)
        before = float(w @ (e * e))
        e = y - x @ new_alpha
        after = float(w @ (e * e))
        state.history.append((before, after))
        sigma = max(math.sqrt(after / max(float(w.sum()), 1e-300)), sigma_floor)
        delta = float(np.max(np.abs(new_alpha - alpha)))
        alpha = new_alpha
        state.iterations = it
        if delta < eps:
            state.converged = True
            break

    state.kernel = _kernel_from(alpha)
    state.sigma = sigma
    full_e = img - conv3x3(img, state.kernel)
    p0 = 1.0 / max(float(e.max() - e.min()), sigma_floor)
    return _posterior(full_e, sigma, p0), state


def pmap_spectrum(pmap) -> np.ndarray:
    """Magnitude of the 2-D DFT of the mean-removed p-map (DC at ``[0, 0]``)."""
    p = np.asarray(pmap, dtype=np.float64)
    spec = np.abs(np.fft.fft2(p - p.mean()))
    spec[0, 0] = 0.0
    return spec


def spectral_peak_ratio(spectrum) -> float:
    """Largest magnitude outside the 3x3 DC neighborhood over the median magnitude."""
    s = np.asarray(spectrum, dtype=np.float64)
    if s.size == 0:
        raise DimensionError("empty spectrum")
    if s.ndim == 1:
        s = s[None, :]
    h, w = s.shape
    outside = np.ones_like(s, dtype=bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            outside[dy % h, dx % w] = False
    peak = float(s[outside].max()) if outside.any() else 0.0
    if peak == 0.0:
        return 0.0
    med = float(np.median(s))
    if med == 0.0:
        return PEAK_SENTINEL
    return min(peak / med, PEAK_SENTINEL)


# ---------------------------------------------------------------------------
# feature cache file: "RSFT", version, A, B, count, then float32 rows

_CACHE_MAGIC = b"RSFT"
_CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<4sIIIQ")


def write_feature_cache(path, features, n_angles: int, n_bins: int) -> None:
    feats = np.asarray(features, dtype="<f4")
    if feats.ndim != 2 or feats.shape[1] != n_angles * n_bins:
        raise DimensionError(f"features must be (count, {n_angles * n_bins}), got {feats.shape}")
    with open(Path(path), "wb") as fh:
        fh.write(_CACHE_HEADER.pack(_CACHE_MAGIC, _CACHE_VERSION, n_angles, n_bins, feats.shape[0]))
        fh.write(feats.tobytes(order="C"))


def read_feature_cache(path) -> tuple[np.ndarray, int, int]:
    data = Path(path).read_bytes()
    if len(data) < _CACHE_HEADER.size:
        raise ParameterError("feature cache is truncated")
    magic, version, a, b, count = _CACHE_HEADER.unpack_from(data)
    if magic != _CACHE_MAGIC:
        raise ParameterError(f"bad feature cache magic {magic!r}")
    if version != _CACHE_VERSION:
        raise ParameterError(f"unsupported feature cache version {version}")
    body = np.frombuffer(data, dtype="<f4", offset=_CACHE_HEADER.size)
    if body.size != count * a * b:
        raise ParameterError("feature cache body does not match its header")
    return body.reshape(count, a * b).astype(np.float64), a, b
