"""Heatmap post-processing: bilateral filtering, Otsu channel selection,
random-walker diffusion between histogram modes, OR fusion, gray mask and
confidence score.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from .errors import DegenerateInputError, NumericError, ParameterError, SeedingError, ShapeError

CHANNELS = ("jpeg_quality", "upsample", "downsample", "rotate_cw", "rotate_ccw", "shear")
EDGE_FLOOR = 1e-6


@dataclass
class HeatmapStack:
    """Six classifier-score maps on the patch grid, channel order as ``CHANNELS``."""

    data: np.ndarray  # (6, rows, cols)
    patch_size: int = 64
    stride: int = 8

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[0] != len(CHANNELS):
            raise ShapeError(f"heatmap stack needs {len(CHANNELS)} channels, got {self.data.shape}")
        if self.data.min() < 0.0 or self.data.max() > 1.0:
            raise ParameterError("heatmap values must lie in [0, 1]")

    @property
    def names(self) -> tuple[str, ...]:
        return CHANNELS

    def channel(self, name: str) -> np.ndarray:
        return self.data[CHANNELS.index(name)]


# ---------------------------------------------------------------------------
# bilateral filter


def bilateral_filter(channel, sigma_s: float = 2.0, sigma_r: float = 0.1) -> np.ndarray:
    """Edge-preserving smoothing with Gaussian spatial and range kernels.

    The window has radius ``ceil(3 sigma_s)`` and is truncated at the borders;
    weights are renormalized over the samples that exist.
    """
    if not (sigma_s > 0 and sigma_r > 0):
        raise ParameterError("bilateral sigmas must be positive")
    g = np.asarray(channel, dtype=np.float64)
    if g.ndim != 2:
        raise ShapeError("bilateral filter expects a 2-D map")
    r = int(math.ceil(3 * sigma_s))
    h, w = g.shape
    padded = np.pad(g, r, mode="constant", constant_values=np.nan)
    num = np.zeros_like(g)
    den = np.zeros_like(g)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            nb = padded[r + dy : r + dy + h, r + dx : r + dx + w]
            valid = ~np.isnan(nb)
            diff = np.where(valid, nb - g, 0.0)
            wgt = math.exp(-(dy * dy + dx * dx) / (2 * sigma_s * sigma_s)) * np.exp(
                -(diff * diff) / (2 * sigma_r * sigma_r)
            )
            wgt = np.where(valid, wgt, 0.0)
            num += wgt * np.where(valid, nb, 0.0)
            den += wgt
    out = num / den
    # a convex combination cannot leave the input range; clip roundoff
    return np.clip(out, g.min(), g.max())


def gaussian_filter(channel, sigma_s: float = 2.0) -> np.ndarray:
    """Plain spatial Gaussian blur with the same window and border rule."""
    return bilateral_filter(channel, sigma_s, sigma_r=1e12)


# ---------------------------------------------------------------------------
# histogram / Otsu


@dataclass
class Histogram:
    counts: np.ndarray
    bins: int

    def center(self, b: int) -> float:
        return (b + 0.5) / self.bins


def histogram(channel, bins: int = 256) -> Histogram:
    v = np.asarray(channel, dtype=np.float64).ravel()
    counts, _ = np.histogram(v, bins=bins, range=(0.0, 1.0))
    return Histogram(counts.astype(np.float64), bins)


@dataclass
class OtsuResult:
    threshold: int  # class 0 = bins <= threshold
    eta: float
    masses: tuple[float, float]
    between_variance: float


def between_class_variances(counts) -> np.ndarray:
    """sigma_B^2 for every split ``t`` (class 0 = bins ``<= t``), length ``bins - 1``."""
    p = np.asarray(counts, dtype=np.float64)
    p = p / p.sum()
    idx = np.arange(p.size)
    w0 = np.cumsum(p)[:-1]
    m0 = np.cumsum(p * idx)[:-1]
    mt = float(np.sum(p * idx))
    w1 = 1.0 - w0
    with np.errstate(divide="ignore", invalid="ignore"):
        sb = (mt * w0 - m0) ** 2 / (w0 * w1)
    sb[(w0 <= 0) | (w1 <= 0)] = 0.0
    return sb


def pick_tied_max(values: np.ndarray, rel_tol: float = 1e-12) -> int:
    """Floor of the mean of the indices attaining the maximum."""
    best = float(values.max())
    ties = np.flatnonzero(values >= best - rel_tol * abs(best))
    return int(math.floor(ties.mean()))


def otsu_threshold(hist: Histogram) -> OtsuResult:
    counts = np.asarray(hist.counts, dtype=np.float64)
    if np.count_nonzero(counts) < 2:
        raise DegenerateInputError("Otsu threshold needs at least two nonempty bins")
    sb = between_class_variances(counts)
    t = pick_tied_max(sb)
    p = counts / counts.sum()
    idx = np.arange(p.size)
    mu = float(np.sum(p * idx))
    var_t = float(np.sum(p * (idx - mu) ** 2))
    w0 = float(p[: t + 1].sum())
    eta = min(max(float(sb[t]) / var_t, 0.0), 1.0)
    return OtsuResult(t, eta, (w0, 1.0 - w0), float(sb[t]))


def channel_select(otsu: OtsuResult, eta_min: float = 0.5, mass_min: float = 0.02) -> bool:
    """Keep a channel only if its histogram is bimodal enough and not speckle."""
    return otsu.eta >= eta_min and min(otsu.masses) >= mass_min


def find_modes(hist: Histogram, threshold: int) -> tuple[int, int]:
    """Highest bin on each side of the threshold; ties go to the bin nearest it."""
    counts = np.asarray(hist.counts)
    low = counts[: threshold + 1]
    high = counts[threshold + 1 :]
    if low.size == 0 or high.size == 0 or low.max() <= 0 or high.max() <= 0:
        raise DegenerateInputError("a side of the threshold has no samples")
    mode1 = int(np.flatnonzero(low == low.max())[-1])
    mode2 = threshold + 1 + int(np.flatnonzero(high == high.max())[0])
    return mode1, mode2


# ---------------------------------------------------------------------------
# random walker


def lattice_laplacian(channel: np.ndarray, beta: float) -> sp.csr_matrix:
    """Graph Laplacian of the 4-connected lattice, ``w = exp(-beta dg^2) + floor``."""
    h, w = channel.shape
    idx = np.arange(h * w).reshape(h, w)
    g = channel
    pairs = [
        (idx[:, :-1].ravel(), idx[:, 1:].ravel(), (g[:, :-1] - g[:, 1:]).ravel()),
        (idx[:-1, :].ravel(), idx[1:, :].ravel(), (g[:-1, :] - g[1:, :]).ravel()),
    ]
    i = np.concatenate([p[0] for p in pairs])
    j = np.concatenate([p[1] for p in pairs])
    wgt = np.exp(-beta * np.concatenate([p[2] for p in pairs]) ** 2) + EDGE_FLOOR
    n = h * w
    adj = sp.coo_matrix((np.concatenate([wgt, wgt]), (np.concatenate([i, j]), np.concatenate([j, i]))),
                        shape=(n, n)).tocsr()
    deg = np.asarray(adj.sum(axis=1)).ravel()
    return (sp.diags(deg) - adj).tocsr()


def seed_labels(channel: np.ndarray, hist: Histogram, mode1: int, mode2: int) -> np.ndarray:
    """0 = unseeded, 1 = class 1 (below mode 1), 2 = class 2 (above mode 2)."""
    labels = np.zeros(channel.shape, dtype=np.int8)
    labels[channel < hist.center(mode1)] = 1
    labels[channel > hist.center(mode2)] = 2
    return labels


def solve_random_walker(channel, labels, beta: float = 90.0, tol: float = 1e-8) -> np.ndarray:
    """Probability of reaching a class-2 seed first, per pixel.

    Seeds are fixed at 0 / 1; the remaining potentials solve the Dirichlet
    problem ``L_U x = -B^T x_seeded`` by Jacobi-preconditioned CG.
    """
    g = np.asarray(channel, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.shape != g.shape:
        raise ShapeError("seed labels must match the channel shape")
    if not beta > 0:
        raise ParameterError("beta must be positive")
    if not (labels == 1).any() or not (labels == 2).any():
        raise SeedingError("random walker needs seeds of both classes")
    lap = lattice_laplacian(g, beta)
    flat = labels.ravel()
    unseeded = np.flatnonzero(flat == 0)
    seeded = np.flatnonzero(flat != 0)
    x_s = (flat[seeded] == 2).astype(np.float64)
    out = np.empty(flat.size)
    out[seeded] = x_s
    if unseeded.size:
        l_u = lap[unseeded][:, unseeded].tocsr()
        rhs = -(lap[unseeded][:, seeded] @ x_s)
        precond = sp.diags(1.0 / l_u.diagonal())
        x_u, info = cg(l_u, rhs, rtol=tol, atol=0.0, M=precond, maxiter=20 * unseeded.size)
        if info != 0:
            raise NumericError(f"conjugate gradient did not converge (info={info})")
        out[unseeded] = np.clip(x_u, 0.0, 1.0)
    return out.reshape(g.shape)


def random_walker(channel, mode1: int, mode2: int, beta: float = 90.0, bins: int = 256,
                  tol: float = 1e-8) -> np.ndarray:
    g = np.asarray(channel, dtype=np.float64)
    hist = Histogram(np.zeros(bins), bins)
    return solve_random_walker(g, seed_labels(g, hist, mode1, mode2), beta, tol)


# ---------------------------------------------------------------------------
# fusion


def binarize(prob, level: float = 0.5) -> np.ndarray:
    return np.asarray(prob) > level


def combine_or(masks) -> np.ndarray:
    masks = [np.asarray(m, dtype=bool) for m in masks]
    if not masks:
        raise ParameterError("combine_or needs at least one mask")
    shape = masks[0].shape
    if any(m.shape != shape for m in masks):
        raise ShapeError("masks differ in shape")
    return np.logical_or.reduce(masks)


def gray_mask(prob_maps, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Pixelwise mean of the selected channels' class-2 probability maps."""
    maps = [np.asarray(m, dtype=np.float64) for m in prob_maps]
    if not maps:
        if shape is None:
            raise ParameterError("shape is required when no channel is selected")
        return np.zeros(shape)
    if any(m.shape != maps[0].shape for m in maps):
        raise ShapeError("probability maps differ in shape")
    return np.clip(np.mean(maps, axis=0), 0.0, 1.0)


def confidence_score(gm, zero_tol: float = 0.0) -> float:
    """Mean of the gray mask over its nonzero pixels (0 for an empty mask)."""
    v = np.asarray(gm, dtype=np.float64).ravel()
    nz = v[v > zero_tol]
    if nz.size == 0:
        return 0.0
    return float(np.clip(nz.mean(), 0.0, 1.0))


# ---------------------------------------------------------------------------
# per-channel driver


@dataclass
class ChannelSegmentation:
    name: str
    otsu: OtsuResult | None
    selected: bool
    modes: tuple[int, int] | None = None
    probability: np.ndarray | None = None
    mask: np.ndarray | None = None
    fallback: bool = False
    note: str = ""


@dataclass
class SegmentationParams:
    eta_min: float = 0.5
    mass_min: float = 0.02
    beta: float = 90.0
    bins: int = 256
    cg_tol: float = 1e-8
    zero_tol: float = 0.0


@dataclass
class SegmentationResult:
    channels: list[ChannelSegmentation] = field(default_factory=list)
    mask: np.ndarray | None = None
    gray: np.ndarray | None = None
    score: float = 0.0

    @property
    def selected(self) -> list[str]:
        return [c.name for c in self.channels if c.selected]


def segment_channel(name: str, channel: np.ndarray, params: SegmentationParams) -> ChannelSegmentation:
    hist = histogram(channel, params.bins)
    try:
        otsu = otsu_threshold(hist)
    except DegenerateInputError as exc:
        return ChannelSegmentation(name, None, False, note=str(exc))
    if not channel_select(otsu, params.eta_min, params.mass_min):
        return ChannelSegmentation(name, otsu, False)
    res = ChannelSegmentation(name, otsu, True)
    try:
        res.modes = find_modes(hist, otsu.threshold)
        labels = seed_labels(channel, hist, *res.modes)
        res.probability = solve_random_walker(channel, labels, params.beta, params.cg_tol)
    except (SeedingError, DegenerateInputError) as exc:
        # fall back to the plain Otsu split of this channel
        res.fallback = True
        res.note = str(exc)
        res.probability = (channel >= (otsu.threshold + 1) / hist.bins).astype(np.float64)
    res.mask = binarize(res.probability)
    return res


def segment_channels(channels: dict[str, np.ndarray], params: SegmentationParams | None = None) -> SegmentationResult:
    params = params or SegmentationParams()
    result = SegmentationResult()
    shape = None
    for name, ch in channels.items():
        shape = ch.shape
        result.channels.append(segment_channel(name, ch, params))
    chosen = [c for c in result.channels if c.selected]
    if chosen:
        result.mask = combine_or([c.mask for c in chosen])
    else:
        result.mask = np.zeros(shape, dtype=bool)
    result.gray = gray_mask([c.probability for c in chosen], shape)
    result.score = confidence_score(result.gray, params.zero_tol)
    return result
