"""Multi-scale statistics discriminator.

The (image, cube) pair is concatenated along channels and passed through a
stride-2 initial block. Each scale then downsamples, adapts, and reduces its
feature map to per-channel mean / max / standard deviation; every statistic
has its own small MLP producing one logit.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .nn import Conv2d, Linear, Module, ModuleList
from .tensor import ShapeError, Tensor, concat, leaky_relu, reshape, safe_sqrt, stack, tmax

__all__ = ["DiscConfig", "DiscOutput", "Discriminator", "STATISTICS", "stats"]

STATISTICS = ("mean", "max", "std")


@dataclass(frozen=True)
class DiscConfig:
    image_channels: int = 3
    bands: int = 8
    scales: int = 3
    base_channels: int = 16
    max_channels: int = 64
    hidden: int = 32
    slope: float = 0.2

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DiscOutput:
    scores: Tensor  # scales × statistics

    @property
    def shape(self) -> tuple[int, int]:
        return self.scores.shape


def stats(f: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Per-channel spatial mean, max and population standard deviation."""
    if f.ndim != 3:
        raise ShapeError(f"expected C×H×W, got {f.shape}")
    c, h, w = f.shape
    flat = reshape(f, (c, h * w))
    mu = flat.mean(axis=1)
    centred = flat - reshape(mu, (c, 1))
    std = safe_sqrt((centred * centred).mean(axis=1))
    return mu, tmax(flat, 1), std


class _StatHead(Module):
    def __init__(self, channels: int, hidden: int, rng, slope: float):
        self.fc1 = Linear(channels, hidden, rng)
        self.fc2 = Linear(hidden, 1, rng)
        self.slope = slope

    def forward(self, v: Tensor) -> Tensor:
        return reshape(self.fc2(leaky_relu(self.fc1(v), self.slope)), ())


class _Scale(Module):
    def __init__(self, cin: int, cout: int, cfg: DiscConfig, rng):
        self.down = Conv2d(cin, cout, 4, rng, stride=2, pad=1)
        self.adapt1 = Conv2d(cout, cout, 3, rng)
        self.adapt2 = Conv2d(cout, cout, 1, rng)
        self.heads = ModuleList([_StatHead(cout, cfg.hidden, rng, cfg.slope) for _ in STATISTICS])
        self.slope = cfg.slope

    def downsample(self, x: Tensor) -> Tensor:
        return leaky_relu(self.down(x), self.slope)

    def adapt(self, x: Tensor) -> Tensor:
        return self.adapt2(leaky_relu(self.adapt1(x), self.slope))

    def score(self, f: Tensor) -> Tensor:
        return stack([head(s) for head, s in zip(self.heads, stats(f))], axis=0)


class Discriminator(Module):
    def __init__(self, cfg: DiscConfig, rng: np.random.Generator | int = 0):
        if cfg.scales < 1:
            raise ValueError("need at least one discriminator scale")
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        self.cfg = cfg
        ch = cfg.base_channels
        self.init1 = Conv2d(cfg.image_channels + cfg.bands, ch, 4, rng, stride=2, pad=1)
        self.init2 = Conv2d(ch, ch, 3, rng)
        scales = []
        for _ in range(cfg.scales):
            nxt = min(2 * ch, cfg.max_channels)
            scales.append(_Scale(ch, nxt, cfg, rng))
            ch = nxt
        self.scales = ModuleList(scales)

    @property
    def min_extent(self) -> int:
        return 2 ** (self.cfg.scales + 1)

    def trunk(self, image: Tensor, cond: Tensor) -> list[Tensor]:
        """Adaptation-block feature maps, one per scale (also the perceptual features)."""
        if image.ndim != 3 or cond.ndim != 3 or image.shape[1:] != cond.shape[1:]:
            raise ShapeError(f"image {image.shape} and condition {cond.shape} extents differ")
        if image.shape[0] != self.cfg.image_channels or cond.shape[0] != self.cfg.bands:
            raise ShapeError(
                f"expected {self.cfg.image_channels}+{self.cfg.bands} channels, got {image.shape[0]}+{cond.shape[0]}"
            )
        if min(image.shape[1:]) < self.min_extent:
            raise ShapeError(f"extent {image.shape[1:]} below the minimum {self.min_extent}")
        s = self.cfg.slope
        x = concat([image, cond], axis=0)
        x = leaky_relu(self.init2(leaky_relu(self.init1(x), s)), s)
        feats = []
        for scale in self.scales:
            x = scale.downsample(x)
            f = scale.adapt(x)
            feats.append(f)
            x = f
        return feats

    def heads(self, feats: list[Tensor]) -> DiscOutput:
        if len(feats) != len(self.scales):
            raise ShapeError(f"expected {len(self.scales)} feature maps, got {len(feats)}")
        return DiscOutput(stack([scale.score(f) for scale, f in zip(self.scales, feats)], axis=0))

    def forward(self, image: Tensor, cond: Tensor) -> DiscOutput:
        return self.heads(self.trunk(image, cond))
