"""Activations, losses and the finite-difference gradient checker."""
from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from ..errors import NumericError, ParameterError, ShapeError

LOG_CLAMP = 1e-12


def logistic(z):
    """Numerically stable logistic sigmoid."""
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def softmax(logits) -> np.ndarray:
    """Class probabilities along the last axis (max-shifted for stability)."""
    z = np.asarray(logits, dtype=np.float64)
    if z.shape[-1] < 2:
        raise ShapeError("softmax needs at least two classes")
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite logits")
    z = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)


def predict_labels(probs) -> np.ndarray:
    return np.argmax(np.asarray(probs), axis=-1)


def cross_entropy_loss(probs, labels) -> float:
    """Mean negative log-probability of the true class over the batch."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels))
    if probs.shape[0] == 0:
        raise ParameterError("empty batch")
    if labels.shape != (probs.shape[0],):
        raise ShapeError("one label per probability vector required")
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise ParameterError("label outside the class range")
    picked = probs[np.arange(probs.shape[0]), labels.astype(np.int64)]
    return float(-np.mean(np.log(np.maximum(picked, LOG_CLAMP))))


def binary_cross_entropy_logits(logits, targets) -> float:
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    # softplus(z) - y z, written to avoid overflow
    return float(np.mean(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))))


def check_finite_grads(grads: Mapping[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter block {name!r}")


def gradient_check(
    loss_fn: Callable[[], float],
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    h: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-6,
) -> float:
    """Largest relative error between ``grads`` and central differences.

    ``params`` must be the live arrays read by ``loss_fn``; entries are
    perturbed in place and restored. The relative error of an entry is
    ``|a - n| / max(|a| + |n|, floor)``. With ``max_entries`` only that many
    randomly chosen entries per block are probed.
    """
    if not 1e-6 <= h <= 1e-4:
        raise ParameterError("finite-difference step must lie in [1e-6, 1e-4]")
    rng = rng if rng is not None else np.random.default_rng(0)
    worst = 0.0
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape mismatch for {name!r}")
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        gflat = g.reshape(-1)
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            up = loss_fn()
            flat[i] = old - h
            down = loss_fn()
            flat[i] = old
            num = (up - down) / (2 * h)
            err = abs(gflat[i] - num) / max(abs(gflat[i]) + abs(num), floor)
            worst = max(worst, err)
    return worst
