"""Desk-scale experiment harnesses used by the scripts and the acceptance suite.

Every harness is a pure function of its config: all randomness comes from
the config seed, so reruns reproduce models and metrics bit for bit.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dataset import (
    MANIPULATED,
    TASKS,
    ParameterRanges,
    TransformChain,
    build_patch_dataset,
    splice_forgery,
    synthetic_sources,
)
from .features import (
    DEFAULT_PREDICTOR,
    em_pmap,
    fast_pmap,
    pmap_spectrum,
    radon_features,
    spectral_peak_ratio,
)
from .imaging import TransformKind, TransformSpec, affine_resample, quantize8
from .nnet.lstm import _front_end as lstm_front_end
from .nnet.mlp import _forward as mlp_forward
from .nnet import (
    TrainConfig,
    gradient_check,
    init_lstm,
    init_mlp,
    lstm_loss,
    lstm_loss_and_grads,
    lstm_predict,
    mlp_loss,
    mlp_loss_and_grads,
    mlp_predict,
    qda_fit,
    qda_scores,
    train_lstm_classifier,
    train_mlp,
)
from .pipeline import DetectConfig, detect, evaluate_roc, iou, lstm_inputs


# ---------------------------------------------------------------------------
# gradient checks


def _jitter_biases(params: dict, rng: np.random.Generator) -> None:
    # zero biases put rectifier inputs exactly on the kink whenever a whole
    # layer is inactive, where the loss has no derivative to check
    for name, p in params.items():
        if name.endswith(("b", "_b")) or name.startswith("b"):
            p += rng.normal(scale=0.5, size=p.shape)


def _mlp_kink_gap(model, x: np.ndarray) -> float:
    pre, _ = mlp_forward(model, x)
    return min(float(np.min(np.abs(z))) for z in pre[:-1])


def _lstm_kink_gap(model, maps: np.ndarray) -> float:
    _, z1, _, _ = lstm_front_end(model, maps)
    return float(np.min(np.abs(z1)))


def _draw_clear_of_kinks(draw, gap, margin: float, tries: int = 50):
    # a central difference straddling a rectifier kink mixes the two one-sided
    # slopes instead of measuring the derivative, so redraw inputs that land close
    for k in range(1, tries + 1):
        x = draw()
        if gap(x) >= margin:
            break
    return x, k, gap(x) >= margin


def gradient_trials(n_trials: int = 100, seed: int = 0, h: float = 1e-5,
                    kink_margin: float = 1e-3) -> dict:
    """Worst relative gradient error for random small MLP and LSTM models.

    Inputs are redrawn until every rectifier pre-activation is at least
    ``kink_margin`` from zero, so each finite difference is taken where the
    loss is smooth. ``redrawn`` counts models that needed more than one draw,
    ``near_kink`` those that never cleared the margin (still checked).
    """
    rng = np.random.default_rng(seed)
    out = {"mlp": [], "lstm": [], "redrawn": 0, "near_kink": 0}

    def tally(draws: int, ok: bool) -> None:
        out["redrawn"] += draws > 1
        out["near_kink"] += not ok

    for _ in range(n_trials):
        sizes = [int(rng.integers(2, 9)), int(rng.integers(2, 7)), int(rng.integers(2, 6)), 1]
        model = init_mlp(sizes, rng)
        _jitter_biases(model.parameters(), rng)
        n = int(rng.integers(1, 5))
        x, draws, ok = _draw_clear_of_kinks(lambda: rng.normal(size=(n, sizes[0])),
                                            lambda v: _mlp_kink_gap(model, v), kink_margin)
        tally(draws, ok)
        y = rng.integers(0, 2, size=len(x)).astype(np.float64)
        wd = float(rng.choice([0.0, 1e-2]))
        _, grads = mlp_loss_and_grads(model, x, y, wd)
        out["mlp"].append(gradient_check(lambda: mlp_loss(model, x, y, wd), model.parameters(), grads, h))

        block = int(rng.choice([2, 4]))
        model = init_lstm(rng, hidden=int(rng.integers(2, 5)), n_layers=int(rng.integers(1, 4)),
                          block=block, patch_size=2 * block, conv_channels=int(rng.integers(1, 4)))
        _jitter_biases(model.parameters(), rng)
        n = int(rng.integers(1, 4))
        maps, draws, ok = _draw_clear_of_kinks(lambda: rng.normal(size=(n, 2 * block, 2 * block)),
                                               lambda v: _lstm_kink_gap(model, v), kink_margin)
        tally(draws, ok)
        labels = rng.integers(0, 2, size=len(maps))
        _, grads = lstm_loss_and_grads(model, maps, labels, wd)
        out["lstm"].append(gradient_check(lambda: lstm_loss(model, maps, labels, wd), model.parameters(), grads, h))
    return out


# ---------------------------------------------------------------------------
# p-map signal and EM recovery


def upscale_exact(img: np.ndarray, factor: float) -> np.ndarray:
    return quantize8(affine_resample(img, factor * np.eye(2)))


def resampling_signal(n_images: int = 20, size: int = 256, factor: float = 1.5, seed: int = 0,
                      sigma: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Peak ratios of fast p-map spectra for pristine and upsampled images."""
    pristine, resampled = [], []
    for img in synthetic_sources(n_images, size, seed):
        pristine.append(spectral_peak_ratio(pmap_spectrum(fast_pmap(img, sigma=sigma))))
        up = upscale_exact(img, factor)
        resampled.append(spectral_peak_ratio(pmap_spectrum(fast_pmap(up, sigma=sigma))))
    return np.array(pristine), np.array(resampled)


def fixed_point_image(alpha_kernel: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Image whose interior pixels equal the kernel combination of their neighbors.

    The one-pixel border is random; the interior solves the linear system
    ``x_i - sum_k a_k x_{i+k} = 0`` given that border.
    """
    img = rng.random((size, size))
    m = size - 2
    idx = np.arange(m * m).reshape(m, m)
    rows, cols, vals = [], [], []
    rhs = np.zeros(m * m)
    for y in range(m):
        for x in range(m):
            i = idx[y, x]
            rows.append(i)
            cols.append(i)
            vals.append(1.0)
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    a = alpha_kernel[1 + dy, 1 + dx]
                    if (dy, dx) == (0, 0) or a == 0:
                        continue
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < m and 0 <= xx < m:
                        rows.append(i)
                        cols.append(idx[yy, xx])
                        vals.append(-a)
                    else:
                        rhs[i] += a * img[yy + 1, xx + 1]
    a_mat = sp.csr_matrix((vals, (rows, cols)), shape=(m * m, m * m))
    img[1:-1, 1:-1] = spla.spsolve(a_mat.tocsc(), rhs).reshape(m, m)
    return img


def random_predictor(rng: np.random.Generator, gain: float = 0.9) -> np.ndarray:
    k = rng.normal(size=(3, 3))
    k[1, 1] = 0.0
    return gain * k / np.abs(k).sum()


def em_recovery(n_trials: int = 20, size: int = 48, seed: int = 0, max_iters: int = 50) -> list[dict]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_trials):
        alpha = random_predictor(rng)
        img = fixed_point_image(alpha, size, rng)
        _, state = em_pmap(img, max_iters=max_iters, eps=1e-9)
        out.append({"error": float(np.max(np.abs(state.kernel - alpha))), "iterations": state.iterations})
    return out


# ---------------------------------------------------------------------------
# classifier bank experiment


@dataclass
class BankConfig:
    task: str = "upsample"
    n_patches: int = 2500  # 2000 train / 500 test after the 80/20 source split
    n_sources: int = 40
    source_size: int = 512
    patch_size: int = 64
    allow_jpeg: bool = False
    upscale: tuple[float, float] = (1.1, 2.0)
    epochs: int = 50
    learning_rate: float = 1e-3
    weight_decay: float = 1e-3
    seed: int = 0

    def ranges(self) -> ParameterRanges:
        return ParameterRanges(upscale=self.upscale)

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, epochs=self.epochs,
                           weight_decay=self.weight_decay, seed=self.seed)


@dataclass
class BankResult:
    config: dict
    mlp_auc: float
    qda_auc: float
    model: object
    losses: list[float]
    seconds: float
    test_scores: np.ndarray = field(repr=False)
    test_labels: np.ndarray = field(repr=False)


def bank_experiment(cfg: BankConfig, sources=None) -> BankResult:
    t0 = time.perf_counter()
    if sources is None:
        sources = synthetic_sources(cfg.n_sources, cfg.source_size, cfg.seed)
    ds = build_patch_dataset(sources, cfg.task, cfg.n_patches, seed=cfg.seed, patch_size=cfg.patch_size,
                             allow_jpeg=cfg.allow_jpeg, ranges=cfg.ranges())
    (p_train, y_train), (p_test, y_test) = ds.subset("train"), ds.subset("test")
    f_train, f_test = radon_features(p_train), radon_features(p_test)
    model, losses = train_mlp(f_train, y_train, cfg.train_config())
    scores = mlp_predict(model, f_test)
    qda = qda_fit(f_train, y_train)
    return BankResult(asdict(cfg), evaluate_roc(scores, y_test).auc,
                      evaluate_roc(qda_scores(qda, f_test), y_test).auc,
                      model, losses, time.perf_counter() - t0, scores, y_test)


def train_channel_models(n_patches: int = 2500, n_sources: int = 40, seed: int = 0, epochs: int = 50,
                         weight_decay: float = 1e-3, log=None) -> dict:
    """One MLP per heatmap channel, trained on default chains (JPEG steps included)."""
    sources = synthetic_sources(n_sources, 512, seed)
    models = {}
    for task in TASKS:
        ds = build_patch_dataset(sources, task, n_patches, seed=seed)
        cfg = TrainConfig(epochs=epochs, weight_decay=weight_decay, seed=seed)
        models[task], _ = train_mlp(radon_features(ds.patches), ds.labels, cfg)
        if log is not None:
            log(f"trained {task}")
    return models


# ---------------------------------------------------------------------------
# end-to-end localization


@dataclass
class SpliceConfig:
    n_images: int = 20
    size: int = 512
    region: int = 96
    margin: int = 32
    upscale: tuple[float, float] = (1.3, 2.0)
    seed: int = 0


def splice_cases(cfg: SpliceConfig):
    """Yield ``(pristine, spliced, truth)`` triples with upscaled donor regions."""
    bases = synthetic_sources(cfg.n_images, cfg.size, cfg.seed * 2 + 1)
    donors = synthetic_sources(cfg.n_images, cfg.size, cfg.seed * 2 + 2)
    for i in range(cfg.n_images):
        rng = np.random.default_rng([cfg.seed, 0x5B1CE, i])
        chain = TransformChain((TransformSpec(TransformKind.UPSCALE, float(rng.uniform(*cfg.upscale))),))
        y, x = (int(v) for v in rng.integers(cfg.margin, cfg.size - cfg.region - cfg.margin, size=2))
        img, mask = splice_forgery(bases[i], donors[i], chain, (y, x, cfg.region, cfg.region))
        yield bases[i], img, mask


def localization_experiment(models: dict, cfg: SpliceConfig, detect_cfg: DetectConfig | None = None) -> dict:
    detect_cfg = detect_cfg or DetectConfig()
    ious, spliced, pristine = [], [], []
    for base, img, mask in splice_cases(cfg):
        r1 = detect(img, models, detect_cfg)
        r0 = detect(base, models, detect_cfg)
        ious.append(iou(r1.mask, mask))
        spliced.append(r1.score)
        pristine.append(r0.score)
    ious, spliced, pristine = np.array(ious), np.array(spliced), np.array(pristine)
    return {"iou": ious, "score_spliced": spliced, "score_pristine": pristine,
            "median_iou": float(np.median(ious)), "win_rate": float(np.mean(spliced > pristine))}


# ---------------------------------------------------------------------------
# LSTM patch classifier


@dataclass
class LstmExperimentConfig:
    inputs: str = "fast"
    n_patches: int = 2500
    n_sources: int = 40
    pmap_sigma: float = 0.1
    hidden: int = 32
    n_layers: int = 3
    epochs: int = 30
    learning_rate: float = 2e-3
    weight_decay: float = 1e-4
    grad_clip: float = 5.0
    augment: bool = True
    recompress: tuple[int, int] = (85, 95)
    seed: int = 0

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, epochs=self.epochs, seed=self.seed,
                           weight_decay=self.weight_decay, grad_clip=self.grad_clip)


@dataclass
class LstmResult:
    config: dict
    auc: float
    train_auc: float
    model: object
    losses: list[float]
    seconds: float
    test_scores: np.ndarray = field(repr=False)
    test_labels: np.ndarray = field(repr=False)


def lstm_dataset(cfg: LstmExperimentConfig, sources=None):
    if sources is None:
        sources = synthetic_sources(cfg.n_sources, 512, cfg.seed)
    return build_patch_dataset(sources, MANIPULATED, cfg.n_patches, seed=cfg.seed,
                               ranges=ParameterRanges(recompress=cfg.recompress))


def lstm_experiment(cfg: LstmExperimentConfig, dataset=None, log=None) -> LstmResult:
    t0 = time.perf_counter()
    ds = dataset if dataset is not None else lstm_dataset(cfg)
    (p_train, y_train), (p_test, y_test) = ds.subset("train"), ds.subset("test")
    x_train = lstm_inputs(p_train, cfg.inputs, cfg.pmap_sigma, DEFAULT_PREDICTOR)
    x_test = lstm_inputs(p_test, cfg.inputs, cfg.pmap_sigma, DEFAULT_PREDICTOR)
    model, history = train_lstm_classifier(x_train, y_train, cfg.train_config(), hidden=cfg.hidden,
                                           n_layers=cfg.n_layers, augment=cfg.augment, log=log)
    scores = lstm_predict(model, x_test)[:, 1]
    train_auc = evaluate_roc(lstm_predict(model, x_train)[:, 1], y_train).auc
    return LstmResult(asdict(cfg), evaluate_roc(scores, y_test).auc, train_auc, model,
                      history.epoch_losses, time.perf_counter() - t0, scores, y_test)
