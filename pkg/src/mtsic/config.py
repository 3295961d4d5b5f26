"""Training configuration and its key=value text form."""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .discriminator import DiscConfig
from .generator import GeneratorConfig
from .objectives import LossWeights

__all__ = ["TrainConfig", "ConfigError", "parse_config", "load_config", "lr_at"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    lr: float = 1e-4
    decay_start: int = 30
    batch: int = 1
    beta1: float = 0.5
    beta2: float = 0.999
    crop: int = 64
    stride: int = 24
    augment: bool = True
    iters: int = 0  # 0: run all epochs
    stages: int = 3
    bands: int = 8
    base_channels: int = 8
    dim: int = 32
    head_dim: int = 8
    attention: str = "smsa"
    window: int = 8
    normalize_qk: bool = True
    disc_scales: int = 3
    disc_channels: int = 16
    w_cgan: float = 1.0
    w_pix: float = 50.0
    w_sam: float = 0.1
    w_fft: float = 1.0
    w_edge: float = 0.5
    w_per: float = 1.0
    w_tv: float = 1.0
    w_ssim: float = 1.0
    seed: int = 0
    precision: str = "float32"
    checkpoint_every_epoch: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 0 <= self.decay_start <= self.epochs:
            raise ConfigError(f"decay_start={self.decay_start} must lie in [0, epochs={self.epochs}]")
        if self.crop % 8:
            raise ConfigError(f"crop={self.crop} must be divisible by 8")
        if self.batch != 1:
            raise ConfigError("only batch size 1 is supported")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")
        if self.iters < 0 or self.lr < 0:
            raise ConfigError("iters and lr must be non-negative")

    def generator(self) -> GeneratorConfig:
        return GeneratorConfig(
            bands=self.bands,
            base_channels=self.base_channels,
            dim=self.dim,
            stages=self.stages,
            head_dim=self.head_dim,
            attention=self.attention,
            window=self.window,
            normalize_qk=self.normalize_qk,
        )

    def discriminator(self) -> DiscConfig:
        return DiscConfig(bands=self.bands, scales=self.disc_scales, base_channels=self.disc_channels)

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            cgan=self.w_cgan, pix=self.w_pix, sam=self.w_sam, fft=self.w_fft,
            edge=self.w_edge, per=self.w_per, tv=self.w_tv, ssim=self.w_ssim,
        )

    def to_text(self) -> str:
        return "".join(f"{k}={_fmt(v)}\n" for k, v in asdict(self).items())

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    def override(self, **values) -> "TrainConfig":
        return replace(self, **{k: _coerce(k, v) for k, v in values.items() if v is not None})


def _fmt(v) -> str:
    return str(v).lower() if isinstance(v, bool) else str(v)


_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _coerce(key: str, value):
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _TYPES[key]
    if not isinstance(value, str):
        return value
    try:
        if kind == "bool":
            low = value.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind}") from exc
    return value.strip()


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        values[k] = _coerce(k, v)
    return replace(base or TrainConfig(), **values)


def load_config(path) -> TrainConfig:
    return parse_config(Path(path).read_text())


def lr_at(cfg: TrainConfig, epoch: float) -> float:
    """Constant until ``decay_start``, then linear down to 0 at ``epochs``."""
    if epoch < cfg.decay_start:
        return cfg.lr
    if cfg.epochs == cfg.decay_start:
        return 0.0
    return cfg.lr * max(cfg.epochs - epoch, 0) / (cfg.epochs - cfg.decay_start)
