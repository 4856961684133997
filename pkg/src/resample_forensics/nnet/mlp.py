"""Dense binary classifier: rectifier hidden layers, logistic output."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError, TrainingError
from .core import binary_cross_entropy_logits, check_finite_grads, logistic
from .optim import Adam, TrainConfig, minibatches

DEFAULT_HIDDEN = (128, 64)


@dataclass
class MlpModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    # fixed input standardization, fitted on the training set
    input_mean: np.ndarray
    input_scale: np.ndarray

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"layer {i} has inconsistent shapes")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(f"layer {i} input does not match previous output")
        if self.weights[-1].shape[1] != 1:
            raise ShapeError("output layer must have a single unit")
        if self.input_mean.shape != (self.input_size,) or self.input_scale.shape != (self.input_size,):
            raise ShapeError("standardization vectors must match the input size")

    @property
    def input_size(self) -> int:
        return self.weights[0].shape[0]

    @property
    def sizes(self) -> list[int]:
        return [self.input_size] + [w.shape[1] for w in self.weights]

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{i}"] = w
            out[f"b{i}"] = b
        return out

    def copy(self) -> "MlpModel":
        return MlpModel([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                        self.input_mean.copy(), self.input_scale.copy())


def init_mlp(sizes, rng: np.random.Generator, input_mean=None, input_scale=None) -> MlpModel:
    """He-uniform weights (limit sqrt(6 / fan_in)), zero biases."""
    sizes = list(sizes)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    mean = np.zeros(sizes[0]) if input_mean is None else np.asarray(input_mean, dtype=np.float64)
    scale = np.ones(sizes[0]) if input_scale is None else np.asarray(input_scale, dtype=np.float64)
    return MlpModel(weights, biases, mean, scale)


def zero_mlp(sizes) -> MlpModel:
    sizes = list(sizes)
    return MlpModel([np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
                    [np.zeros(b) for b in sizes[1:]], np.zeros(sizes[0]), np.ones(sizes[0]))


def _forward(model: MlpModel, x: np.ndarray):
    a = (x - model.input_mean) / model.input_scale
    acts = [a]
    pre = []
    n = len(model.weights)
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        pre.append(z)
        a = np.maximum(z, 0.0) if i < n - 1 else z
        acts.append(a)
    return pre, acts


def _as_batch(model: MlpModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    if x.ndim != 2 or x.shape[1] != model.input_size:
        raise ShapeError(f"expected inputs of length {model.input_size}, got {x.shape}")
    return x


def mlp_logits(model: MlpModel, x) -> np.ndarray:
    _, acts = _forward(model, _as_batch(model, x))
    return acts[-1][:, 0]


def mlp_predict(model: MlpModel, x) -> np.ndarray:
    """Probabilities for a batch ``(n, d)``."""
    return logistic(mlp_logits(model, x))


def mlp_forward(model: MlpModel, x) -> float:
    """Probability that the characteristic is present, for one feature vector."""
    x = np.asarray(getattr(x, "values", x), dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError("mlp_forward takes a single feature vector")
    return float(mlp_predict(model, x)[0])


def mlp_loss(model: MlpModel, x, y, weight_decay: float = 0.0) -> float:
    x = _as_batch(model, x)
    loss = binary_cross_entropy_logits(mlp_logits(model, x), y)
    if weight_decay:
        loss += 0.5 * weight_decay * sum(float(np.sum(w * w)) for w in model.weights)
    return loss


def mlp_loss_and_grads(model: MlpModel, x, y, weight_decay: float = 0.0):
    """Mean binary cross-entropy and its gradient for every parameter block."""
    x = _as_batch(model, x)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    pre, acts = _forward(model, x)
    logits = acts[-1][:, 0]
    loss = binary_cross_entropy_logits(logits, y)
    m = x.shape[0]
    delta = ((logistic(logits) - y) / m)[:, None]
    grads = {}
    for i in range(len(model.weights) - 1, -1, -1):
        w = model.weights[i]
        grads[f"W{i}"] = acts[i].T @ delta
        grads[f"b{i}"] = delta.sum(axis=0)
        if weight_decay:
            grads[f"W{i}"] = grads[f"W{i}"] + weight_decay * w
        if i:
            delta = (delta @ w.T) * (pre[i - 1] > 0)
    if weight_decay:
        loss += 0.5 * weight_decay * sum(float(np.sum(w * w)) for w in model.weights)
    check_finite_grads(grads)
    return loss, grads


def standardization(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale < 1e-12] = 1.0
    return mean, scale


def train_mlp(features, labels, cfg: TrainConfig | None = None, hidden=DEFAULT_HIDDEN):
    """Fit a binary classifier by mini-batch Adam on mean cross-entropy.

    Returns ``(model, losses)`` where ``losses[0]`` is the loss at
    initialization and ``losses[k]`` the full-set loss after epoch ``k``.
    """
    cfg = cfg or TrainConfig()
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if x.ndim != 2 or x.shape[0] == 0:
        raise TrainingError("training set is empty")
    if y.shape[0] != x.shape[0]:
        raise TrainingError("one label per sample required")
    if len(np.unique(y)) < 2:
        raise TrainingError("training set must contain both labels")
    rng = np.random.default_rng(cfg.seed)
    mean, scale = standardization(x)
    model = init_mlp([x.shape[1], *hidden, 1], rng, mean, scale)
    opt = Adam(model.parameters(), cfg)
    losses = [mlp_loss(model, x, y, cfg.weight_decay)]
    for _ in range(cfg.epochs):
        for idx in minibatches(x.shape[0], cfg.batch_size, rng):
            _, grads = mlp_loss_and_grads(model, x[idx], y[idx], cfg.weight_decay)
            opt.step(grads)
        losses.append(mlp_loss(model, x, y, cfg.weight_decay))
    return model, losses
