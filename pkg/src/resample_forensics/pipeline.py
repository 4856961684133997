"""End-to-end detection and evaluation.

Pipeline 1 scores every stride-spaced patch with six binary classifiers on
the Radon feature, smooths the resulting heatmaps and segments them into a
tamper mask. Pipeline 2 classifies fast p-map patches with the LSTM model.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import DimensionError, EvaluationError, ParameterError, ShapeError
from .features import DEFAULT_ANGLES, DEFAULT_PREDICTOR, em_pmap, fast_pmaps, radon_features
from .imaging import PatchGrid, as_image
from .nnet.core import logistic
from .nnet.lstm import LstmModel, lstm_predict
from .nnet.mlp import MlpModel, mlp_predict
from .nnet.qda import QdaModel, qda_scores
from .nnet.serialize import load_model
from .segmentation import (
    CHANNELS,
    HeatmapStack,
    SegmentationParams,
    SegmentationResult,
    bilateral_filter,
    binarize,
    combine_or,
    confidence_score,
    gray_mask,
    segment_channels,
)

MODEL_SUFFIX = ".rsnn"
# stricter than the segmentation default: on smoothed score grids only
# clearly bimodal channels are worth segmenting
DETECT_ETA_MIN = 0.95


def default_workers() -> int:
    env = os.environ.get("RESAMPLE_FORENSICS_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise ParameterError(f"RESAMPLE_FORENSICS_THREADS must be an integer, got {env!r}") from exc
        if n < 1:
            raise ParameterError("RESAMPLE_FORENSICS_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


@dataclass
class DetectConfig:
    patch_size: int = 64
    stride: int = 8
    n_angles: int = DEFAULT_ANGLES
    # bilateral sigmas: spatial in heatmap cells, range in score units
    sigma_s: float = 2.0
    sigma_r: float = 0.1
    segmentation: SegmentationParams = field(default_factory=lambda: SegmentationParams(eta_min=DETECT_ETA_MIN))
    # "grid": segment the heatmap grid and lift the probability maps to pixels;
    # "pixel": segment the upsampled maps directly (slow on large images)
    segment_at: str = "grid"
    workers: int = 1
    chunk: int = 256

    def __post_init__(self):
        if self.patch_size < 8 or self.stride < 1:
            raise ParameterError("patch_size must be >= 8 and stride >= 1")
        if self.workers < 1 or self.chunk < 1:
            raise ParameterError("workers and chunk must be positive")
        if self.segment_at not in ("grid", "pixel"):
            raise ParameterError(f"segment_at must be 'grid' or 'pixel', got {self.segment_at!r}")


# ---------------------------------------------------------------------------
# patch scoring


def score_features(model, feats: np.ndarray) -> np.ndarray:
    """P(characteristic present) for each feature row."""
    if isinstance(model, MlpModel):
        return mlp_predict(model, feats)
    if isinstance(model, QdaModel):
        return logistic(qda_scores(model, feats))
    if callable(model):
        return np.asarray(model(feats), dtype=np.float64)
    raise ParameterError(f"cannot score with {type(model).__name__}")


def _grid_windows(img: np.ndarray, grid: PatchGrid) -> np.ndarray:
    s, st = grid.patch_size, grid.stride
    win = np.lib.stride_tricks.sliding_window_view(img, (s, s))[::st, ::st][: grid.rows, : grid.cols]
    return win.reshape(grid.rows * grid.cols, s, s)


def _map_chunks(fn, n: int, chunk: int, workers: int) -> np.ndarray:
    spans = [(a, min(a + chunk, n)) for a in range(0, n, chunk)]
    if workers > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda ab: fn(*ab), spans))
    else:
        parts = [fn(a, b) for a, b in spans]
    # results are placed by span, so the worker order never matters
    return np.concatenate(parts, axis=0)


def compute_heatmaps(img, models: dict, cfg: DetectConfig | None = None) -> HeatmapStack:
    cfg = cfg or DetectConfig()
    img = as_image(img)
    grid = PatchGrid.for_image(*img.shape, cfg.patch_size, cfg.stride)
    missing = [c for c in CHANNELS if c not in models]
    if missing:
        raise ParameterError(f"missing channel models: {missing}")
    windows = _grid_windows(img, grid)

    def work(a, b):
        feats = radon_features(np.ascontiguousarray(windows[a:b]), cfg.n_angles)
        return np.stack([score_features(models[c], feats) for c in CHANNELS], axis=1)

    scores = _map_chunks(work, len(windows), cfg.chunk, cfg.workers)
    data = np.clip(scores.T.reshape(len(CHANNELS), grid.rows, grid.cols), 0.0, 1.0)
    return HeatmapStack(data, cfg.patch_size, cfg.stride)


def _interp_matrix(n_out: int, centers: np.ndarray) -> np.ndarray:
    """Linear interpolation weights from grid samples at ``centers`` to pixels 0..n_out-1."""
    m = np.zeros((n_out, len(centers)))
    if len(centers) == 1:
        m[:, 0] = 1.0
        return m
    step = centers[1] - centers[0]
    pos = np.clip((np.arange(n_out) - centers[0]) / step, 0.0, len(centers) - 1)
    lo = np.minimum(np.floor(pos).astype(int), len(centers) - 2)
    t = pos - lo
    rows = np.arange(n_out)
    m[rows, lo] = 1.0 - t
    m[rows, lo + 1] += t
    return m


def upsample_heatmap(grid_map: np.ndarray, grid: PatchGrid, shape: tuple[int, int]) -> np.ndarray:
    """Bilinear upsampling with each cell anchored at its patch center (edge values held)."""
    grid_map = np.asarray(grid_map, dtype=np.float64)
    if grid_map.shape != (grid.rows, grid.cols):
        raise ShapeError(f"map {grid_map.shape} does not match grid {grid.rows}x{grid.cols}")
    cy, cx = grid.centers()
    return _interp_matrix(shape[0], cy) @ grid_map @ _interp_matrix(shape[1], cx).T


@dataclass
class DetectionResult:
    heatmaps: HeatmapStack
    filtered: np.ndarray  # (6, rows, cols)
    pixel_maps: np.ndarray  # (6, H, W)
    segmentation: SegmentationResult
    image_shape: tuple[int, int]

    @property
    def selected(self) -> list[str]:
        return self.segmentation.selected

    @property
    def gray(self) -> np.ndarray:
        return self.segmentation.gray

    @property
    def mask(self) -> np.ndarray:
        return self.segmentation.mask

    @property
    def score(self) -> float:
        return self.segmentation.score

    def summary(self) -> dict:
        return {
            "image_shape": list(self.image_shape),
            "grid": [int(self.heatmaps.data.shape[1]), int(self.heatmaps.data.shape[2])],
            "selected_channels": self.selected,
            "channels": {
                c.name: {
                    "selected": c.selected,
                    "threshold": None if c.otsu is None else int(c.otsu.threshold),
                    "eta": None if c.otsu is None else float(c.otsu.eta),
                    "fallback": c.fallback,
                }
                for c in self.segmentation.channels
            },
            "mask_fraction": float(self.mask.mean()),
            "confidence": self.score,
        }


def detect(img, models: dict, cfg: DetectConfig | None = None) -> DetectionResult:
    """Dense six-channel detection and localization of one grayscale image.

    ``models`` maps every name in ``CHANNELS`` to a trained classifier.
    """
    cfg = cfg or DetectConfig()
    img = as_image(img)
    if img.shape[0] < cfg.patch_size or img.shape[1] < cfg.patch_size:
        raise DimensionError(f"image {img.shape} is smaller than one {cfg.patch_size}px patch")
    return localize(compute_heatmaps(img, models, cfg), img.shape, cfg)


def localize(stack: HeatmapStack, shape: tuple[int, int], cfg: DetectConfig | None = None) -> DetectionResult:
    """Filter, segment and fuse precomputed heatmaps for an image of ``shape``."""
    cfg = cfg or DetectConfig()
    grid = PatchGrid.for_image(*shape, stack.patch_size, stack.stride)
    filtered = np.stack([bilateral_filter(ch, cfg.sigma_s, cfg.sigma_r) for ch in stack.data])
    pixel = np.stack([_to_pixels(ch, grid, shape) for ch in filtered])
    if cfg.segment_at == "pixel":
        seg = segment_channels(dict(zip(CHANNELS, pixel)), cfg.segmentation)
    else:
        seg = segment_channels(dict(zip(CHANNELS, filtered)), cfg.segmentation)
        seg = _lift_segmentation(seg, grid, shape, cfg.segmentation.zero_tol)
    return DetectionResult(stack, filtered, pixel, seg, tuple(shape))


def _to_pixels(grid_map: np.ndarray, grid: PatchGrid, shape) -> np.ndarray:
    return np.clip(upsample_heatmap(grid_map, grid, shape), 0.0, 1.0)


def _lift_segmentation(seg: SegmentationResult, grid: PatchGrid, shape, zero_tol: float) -> SegmentationResult:
    """Carry grid-level channel probabilities to pixels and redo fusion there."""
    chosen = [c for c in seg.channels if c.selected]
    for c in chosen:
        c.probability = _to_pixels(c.probability, grid, shape)
        c.mask = binarize(c.probability)
    seg.mask = combine_or([c.mask for c in chosen]) if chosen else np.zeros(shape, dtype=bool)
    seg.gray = gray_mask([c.probability for c in chosen], shape)
    seg.score = confidence_score(seg.gray, zero_tol)
    return seg


def load_channel_models(directory) -> dict:
    directory = Path(directory)
    models = {}
    for name in CHANNELS:
        path = directory / f"{name}{MODEL_SUFFIX}"
        if not path.exists():
            raise ParameterError(f"missing model file {path}")
        models[name] = load_model(path)
    return models


# ---------------------------------------------------------------------------
# pipeline 2


LSTM_INPUTS = ("fast", "em", "pixels")
DEFAULT_PMAP_SIGMA = 0.1


def _standardize(maps: np.ndarray) -> np.ndarray:
    mean = maps.mean(axis=(1, 2), keepdims=True)
    std = maps.std(axis=(1, 2), keepdims=True)
    return (maps - mean) / (std + 1e-8)


def lstm_inputs(patches, kind: str = "fast", sigma: float = DEFAULT_PMAP_SIGMA,
                kernel=DEFAULT_PREDICTOR) -> np.ndarray:
    """Per-patch standardized network inputs: a p-map (``fast`` / ``em``) or the pixels themselves."""
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim == 2:
        patches = patches[None]
    if kind == "fast":
        maps = fast_pmaps(patches, kernel, sigma)
    elif kind == "em":
        maps = np.stack([em_pmap(p)[0] for p in patches])
    elif kind == "pixels":
        maps = patches
    else:
        raise ParameterError(f"unknown LSTM input {kind!r}; expected one of {LSTM_INPUTS}")
    return _standardize(maps)


def lstm_detect(img, model: LstmModel, stride: int = 8, sigma: float = DEFAULT_PMAP_SIGMA,
                kernel=DEFAULT_PREDICTOR, inputs: str = "fast", chunk: int = 256) -> np.ndarray:
    """Per-patch manipulation probability arranged on the patch grid."""
    img = as_image(img)
    size = model.patch_size
    if img.shape[0] < size or img.shape[1] < size:
        raise DimensionError(f"image {img.shape} is smaller than one {size}px patch")
    grid = PatchGrid.for_image(*img.shape, size, stride)
    windows = _grid_windows(img, grid)
    probs = _map_chunks(lambda a, b: lstm_predict(model, lstm_inputs(windows[a:b], inputs, sigma, kernel))[:, 1],
                        len(windows), chunk, 1)
    return probs.reshape(grid.rows, grid.cols)


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    def to_csv(self) -> str:
        lines = ["threshold,fpr,tpr"]
        for t, f, p in zip(self.thresholds, self.fpr, self.tpr):
            lines.append(f"{float(t)!r},{float(f)!r},{float(p)!r}")
        return "\n".join(lines) + "\n"


def evaluate_roc(scores, labels) -> RocCurve:
    """ROC over all unique score thresholds; tied scores move together.

    The AUC is the trapezoid area, accumulated in integer arithmetic and
    rounded to float once at the end.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise ShapeError("scores and labels differ in length")
    if not np.all(np.isfinite(s)):
        raise EvaluationError("scores must be finite")
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("both classes must be present")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    ends = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = np.r_[0, np.cumsum(y)[ends]]
    fp = np.r_[0, np.cumsum(~y)[ends]]
    twice_area = int(np.sum((fp[1:] - fp[:-1]) * (tp[1:] + tp[:-1]), dtype=np.int64))
    auc = float(Fraction(twice_area, 2 * n_pos * n_neg))
    return RocCurve(fp / n_neg, tp / n_pos, np.r_[np.inf, s[ends]], auc)


def _check_masks(mask, truth) -> tuple[np.ndarray, np.ndarray]:
    m = np.asarray(mask, dtype=bool)
    t = np.asarray(truth, dtype=bool)
    if m.shape != t.shape:
        raise ShapeError(f"mask {m.shape} and truth {t.shape} differ")
    return m, t


def iou(mask, truth) -> float:
    m, t = _check_masks(mask, truth)
    union = np.count_nonzero(m | t)
    if union == 0:
        return 1.0
    return np.count_nonzero(m & t) / union


def pixel_f1(mask, truth) -> float:
    m, t = _check_masks(mask, truth)
    denom = np.count_nonzero(m) + np.count_nonzero(t)
    if denom == 0:
        return 1.0
    return 2.0 * np.count_nonzero(m & t) / denom
