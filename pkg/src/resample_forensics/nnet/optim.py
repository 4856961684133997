from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ParameterError


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 50
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    # global gradient-norm cap; 0 disables clipping
    grad_clip: float = 0.0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ParameterError("learning rate must be non-negative")
        if self.batch_size < 1:
            raise ParameterError("batch size must be >= 1")
        if self.epochs < 0:
            raise ParameterError("epoch count must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ParameterError("moment decay rates must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ParameterError("weight decay must be non-negative")
        if self.grad_clip < 0:
            raise ParameterError("gradient clip must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    """Adaptive-moment updates applied in place to a dict of parameter arrays."""

    def __init__(self, params: dict[str, np.ndarray], cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        c = self.cfg
        if c.grad_clip > 0:
            grads = clip_by_global_norm(grads, c.grad_clip)
        self.t += 1
        bc1 = 1 - c.beta1**self.t
        bc2 = 1 - c.beta2**self.t
        for k, p in self.params.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= c.beta1
            m += (1 - c.beta1) * g
            v *= c.beta2
            v += (1 - c.beta2) * g * g
            p -= c.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + c.adam_eps)


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


def minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]
