"""Generator: a 4-scale conv backbone, the U-shaped STformer, and the Ns-stage cascade."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import functional as F
from .attention import SARB
from .mswb import MSWB
from .nn import Conv2d, ConvTranspose2d, DSConv, Module, ModuleList
from .tensor import ShapeError, Tensor, concat, gelu, parameter, tanh

__all__ = ["GeneratorConfig", "Backbone", "STformer", "MTSIC"]


@dataclass(frozen=True)
class GeneratorConfig:
    bands: int = 8
    base_channels: int = 8
    dim: int = 32
    stages: int = 3
    head_dim: int = 8
    attention: str = "smsa"
    window: int = 8
    normalize_qk: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


class Backbone(Module):
    """Stem + three stride-2 stages giving (C, 2C, 4C, 8C) maps at (/1, /2, /4, /8),
    fused back to ``dim`` channels at full resolution."""

    def __init__(self, bands: int, base: int, dim: int, rng):
        self.stem = Conv2d(bands, base, 3, rng)
        self.block1 = Conv2d(base, base, 3, rng)
        chans = [base, 2 * base, 4 * base, 8 * base]
        for i in range(3):
            setattr(self, f"down{i + 2}", Conv2d(chans[i], chans[i + 1], 2, rng, stride=2, pad=0))
            setattr(self, f"block{i + 2}", Conv2d(chans[i + 1], chans[i + 1], 3, rng))
        self.fuse = Conv2d(sum(chans), dim, 1, rng)

    def pyramid(self, cube: Tensor) -> list[Tensor]:
        _, h, w = cube.shape
        if h % 8 or w % 8:
            raise ShapeError(f"backbone needs extents divisible by 8, got {h}×{w}")
        x = gelu(self.block1(self.stem(cube)))
        feats = [x]
        for i in range(2, 5):
            x = gelu(getattr(self, f"block{i}")(getattr(self, f"down{i}")(x)))
            feats.append(x)
        return feats

    def forward(self, cube: Tensor) -> Tensor:
        feats = self.pyramid(cube)
        size = feats[0].shape[1:]
        ups = [feats[0]] + [F.resize(f, size) for f in feats[1:]]
        return self.fuse(concat(ups, axis=0))


def _sarbs(n: int, dim: int, cfg: GeneratorConfig, rng) -> ModuleList:
    return ModuleList(
        [SARB(dim, cfg.head_dim, rng, cfg.attention, cfg.window, cfg.normalize_qk) for _ in range(n)]
    )


class STformer(Module):
    """Embedding -> SARB encoder (dim, 2dim, 4dim) -> MSWB bottleneck ->
    mirrored decoder with transposed-conv upsampling and DSConv skip fusion -> mapping."""

    def __init__(self, dim: int, rng, cfg: GeneratorConfig | None = None):
        cfg = cfg or GeneratorConfig(dim=dim)
        self.embed = Conv2d(dim, dim, 3, rng)
        self.enc1 = _sarbs(2, dim, cfg, rng)
        self.down1 = Conv2d(dim, 2 * dim, 4, rng, stride=2, pad=1)
        self.enc2 = _sarbs(2, 2 * dim, cfg, rng)
        self.down2 = Conv2d(2 * dim, 4 * dim, 4, rng, stride=2, pad=1)
        self.enc3 = _sarbs(2, 4 * dim, cfg, rng)
        self.bottleneck = MSWB(4 * dim, rng)
        self.up2 = ConvTranspose2d(4 * dim, 2 * dim, 2, rng)
        self.skip2 = DSConv(4 * dim, 2 * dim, rng)
        self.dec2 = _sarbs(2, 2 * dim, cfg, rng)
        self.up1 = ConvTranspose2d(2 * dim, dim, 2, rng)
        self.skip1 = DSConv(2 * dim, dim, rng)
        self.dec1 = _sarbs(2, dim, cfg, rng)
        self.mapping = Conv2d(dim, dim, 3, rng)

    @staticmethod
    def _run(blocks: ModuleList, x: Tensor) -> Tensor:
        for b in blocks:
            x = b(x)
        return x

    def forward(self, f: Tensor) -> Tensor:
        _, h, w = f.shape
        # two ×2 downsamples, then the bottleneck wavelet split needs one more factor of 2
        if h % 8 or w % 8:
            raise ShapeError(f"STformer needs extents divisible by 8, got {h}×{w}")
        e1 = self._run(self.enc1, self.embed(f))
        e2 = self._run(self.enc2, self.down1(e1))
        e3 = self._run(self.enc3, self.down2(e2))
        b = self.bottleneck(e3)
        d2 = self._run(self.dec2, self.skip2(concat([self.up2(b), e2], axis=0)))
        d1 = self._run(self.dec1, self.skip1(concat([self.up1(d2), e1], axis=0)))
        return self.mapping(d1)


class MTSIC(Module):
    """f0 = backbone(cube); f_k = STformer_k(f_{k-1}) + g_k f_{k-1};
    rgb = tanh(head(f_Ns + proj(f0)))."""

    def __init__(self, cfg: GeneratorConfig, rng: np.random.Generator | int = 0):
        if cfg.stages < 1:
            raise ValueError("need at least one STformer stage")
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        self.cfg = cfg
        self.backbone = Backbone(cfg.bands, cfg.base_channels, cfg.dim, rng)
        self.stages = ModuleList([STformer(cfg.dim, rng, cfg) for _ in range(cfg.stages)])
        self.skip_gain = parameter(np.ones(cfg.stages))
        self.proj = Conv2d(cfg.dim, cfg.dim, 1, rng)
        self.head = Conv2d(cfg.dim, 3, 3, rng)

    def forward(self, cube: Tensor) -> Tensor:
        if cube.ndim != 3 or cube.shape[0] != self.cfg.bands:
            raise ShapeError(f"expected a {self.cfg.bands}×H×W cube, got {cube.shape}")
        f0 = self.backbone(cube)
        f = f0
        for k, stage in enumerate(self.stages):
            f = stage(f) + f * self.skip_gain[k]
        return tanh(self.head(f + self.proj(f0)))
