"""Run configuration shared by the CLI and the experiment scripts."""
from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .nnet.optim import TrainConfig
from .pipeline import DetectConfig
from .segmentation import SegmentationParams

INTERPOLATIONS = ("nearest", "bilinear", "bicubic")
PMAP_KINDS = ("fast", "em")


def substream(seed: int, name: str) -> int:
    """Child seed for a named random stream (stable across runs and platforms)."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(name.encode("utf-8"))])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


@dataclass
class RunConfig:
    sources: str | None = None
    models: str | None = None
    outputs: str | None = None

    patch_size: int = 64
    stride: int = 8
    interpolation: str = "bilinear"
    n_angles: int = 8
    pmap: str = "fast"
    pmap_sigma: float = 0.1

    sigma_s: float = 2.0
    sigma_r: float = 0.1
    beta: float = 90.0
    eta_min: float = 0.95
    mass_min: float = 0.02

    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 50
    weight_decay: float = 1e-3
    lstm_hidden: int = 32
    lstm_layers: int = 3
    lstm_epochs: int = 30
    lstm_learning_rate: float = 2e-3
    lstm_weight_decay: float = 1e-4
    lstm_grad_clip: float = 5.0

    seed: int = 0
    threads: int | None = None

    def __post_init__(self):
        self.validate()

    # -- validation -------------------------------------------------------

    def problems(self) -> list[str]:
        out = []

        def need(cond, msg):
            if not cond:
                out.append(msg)

        need(isinstance(self.patch_size, int) and self.patch_size >= 8 and self.patch_size % 8 == 0,
             f"patch_size: must be a multiple of 8 and >= 8 (got {self.patch_size!r})")
        need(isinstance(self.stride, int) and self.stride >= 1, f"stride: must be >= 1 (got {self.stride!r})")
        need(self.interpolation in INTERPOLATIONS, f"interpolation: one of {INTERPOLATIONS} (got {self.interpolation!r})")
        need(isinstance(self.n_angles, int) and self.n_angles >= 1, f"n_angles: must be >= 1 (got {self.n_angles!r})")
        need(self.pmap in PMAP_KINDS, f"pmap: one of {PMAP_KINDS} (got {self.pmap!r})")
        for name in ("pmap_sigma", "sigma_s", "sigma_r", "beta", "learning_rate", "lstm_learning_rate"):
            v = getattr(self, name)
            need(isinstance(v, (int, float)) and v > 0, f"{name}: must be > 0 (got {v!r})")
        need(isinstance(self.eta_min, (int, float)) and 0 <= self.eta_min <= 1, f"eta_min: must lie in [0, 1] (got {self.eta_min!r})")
        need(isinstance(self.mass_min, (int, float)) and 0 <= self.mass_min < 0.5, f"mass_min: must lie in [0, 0.5) (got {self.mass_min!r})")
        for name in ("weight_decay", "lstm_weight_decay", "lstm_grad_clip"):
            v = getattr(self, name)
            need(isinstance(v, (int, float)) and v >= 0, f"{name}: must be >= 0 (got {v!r})")
        for name in ("batch_size", "epochs", "lstm_hidden", "lstm_layers", "lstm_epochs"):
            v = getattr(self, name)
            need(isinstance(v, int) and v >= 1, f"{name}: must be an integer >= 1 (got {v!r})")
        need(isinstance(self.seed, int) and self.seed >= 0, f"seed: must be a non-negative integer (got {self.seed!r})")
        need(self.threads is None or (isinstance(self.threads, int) and self.threads >= 1),
             f"threads: must be >= 1 (got {self.threads!r})")
        return out

    def validate(self, require_paths: tuple[str, ...] = ()) -> "RunConfig":
        issues = self.problems()
        for name in require_paths:
            value = getattr(self, name)
            if value is None:
                issues.append(f"{name}: a path is required")
            elif not Path(value).exists():
                issues.append(f"{name}: {value} does not exist")
        if issues:
            raise ConfigError("invalid configuration:\n  " + "\n  ".join(issues))
        return self

    # -- round trip ---------------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def merged(self, overrides: dict) -> "RunConfig":
        """Copy with non-None ``overrides`` applied (command-line flags win)."""
        data = self.to_dict()
        data.update({k: v for k, v in overrides.items() if v is not None})
        return self.from_dict(data)

    # -- derived configs ----------------------------------------------------

    def segmentation(self) -> SegmentationParams:
        return SegmentationParams(eta_min=self.eta_min, mass_min=self.mass_min, beta=self.beta)

    def detect_config(self) -> DetectConfig:
        return DetectConfig(patch_size=self.patch_size, stride=self.stride, n_angles=self.n_angles,
                            sigma_s=self.sigma_s, sigma_r=self.sigma_r, segmentation=self.segmentation(),
                            workers=self.threads or 1)

    def mlp_train_config(self, stream: str = "init") -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size, epochs=self.epochs,
                           seed=substream(self.seed, stream), weight_decay=self.weight_decay)

    def lstm_train_config(self, stream: str = "init") -> TrainConfig:
        return TrainConfig(learning_rate=self.lstm_learning_rate, batch_size=self.batch_size,
                           epochs=self.lstm_epochs, seed=substream(self.seed, stream),
                           weight_decay=self.lstm_weight_decay, grad_clip=self.lstm_grad_clip)
