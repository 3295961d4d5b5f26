"""Multi-scale wavelet block: a CBAM global branch, an SPP local branch and a
Haar branch, cross-fused by the spatial-frequency fusion module (SFFM)."""
from __future__ import annotations

from typing import Sequence

from . import functional as F
from .nn import CBR, Conv2d, LayerNorm, Linear, Module, TapConv
from .tensor import ShapeError, Tensor, concat, relu, reshape, sigmoid, stack, tmax
from .wavelet import haar_dwt2

__all__ = [
    "DIRECTIONS",
    "SFFM_PAIRING",
    "direction_offsets",
    "directional_strip_conv",
    "CBAM",
    "SFFM",
    "MSWB",
]

# unit step (dy, dx) per direction; rows grow downwards, so 45° points up-right
DIRECTIONS = {45: (-1, 1), 0: (0, 1), 135: (1, 1)}
SFFM_PAIRING = ((45, 7), (0, 11), (135, 21))
STRIP_LENGTH = 9


def direction_offsets(direction: int, length: int = STRIP_LENGTH) -> list[tuple[int, int]]:
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {sorted(DIRECTIONS)}, got {direction}")
    dy, dx = DIRECTIONS[direction]
    half = length // 2
    return [(t * dy, t * dx) for t in range(-half, half + 1)]


def directional_strip_conv(x: Tensor, kernel: Tensor, direction: int, bias: Tensor | None = None) -> Tensor:
    """Depthwise 9-tap line filter along ``direction`` (degrees).

    ``kernel`` is either length-9 (shared by every channel) or channels×9.
    """
    if kernel.ndim == 1:
        kernel = stack([kernel] * x.shape[0], axis=0)
    return F.depthwise_taps(x, kernel, direction_offsets(direction, kernel.shape[1]), bias)


def _row(k: int) -> list[tuple[int, int]]:
    return [(0, t) for t in range(-(k // 2), k // 2 + 1)]


def _col(k: int) -> list[tuple[int, int]]:
    return [(t, 0) for t in range(-(k // 2), k // 2 + 1)]


class CBAM(Module):
    """Channel gate from avg/max-pooled descriptors, then a 7×7 spatial gate."""

    def __init__(self, dim: int, rng, reduction: int = 8):
        hidden = max(dim // reduction, 1)
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)
        self.spatial = Conv2d(2, 1, 7, rng)

    def mlp(self, v: Tensor) -> Tensor:
        return self.fc2(relu(self.fc1(v)))

    def forward(self, x: Tensor) -> Tensor:
        c, h, w = x.shape
        flat = reshape(x, (c, h * w))
        gate = sigmoid(self.mlp(flat.mean(axis=1)) + self.mlp(tmax(flat, 1)))
        x = x * reshape(gate, (c, 1, 1))
        desc = concat([x.mean(axis=0, keepdims=True), tmax(x, 0, keepdims=True)], axis=0)
        return x * sigmoid(self.spatial(desc))


class SFFM(Module):
    """Fuse a spatial stream (downsampled ×2 on entry) with a frequency stream.

    For each (direction, k) pairing the two LayerNormed inputs pass through
    their own directional strip conv and a shared 1×k -> k×1 pair; the two
    results are summed and mixed by a 1×1 conv. The three mixes are
    concatenated and fused by 1×1 conv, then 3×3 convs of both raw inputs are
    added.
    """

    def __init__(self, dim: int, rng, pairing: Sequence[tuple[int, int]] = SFFM_PAIRING):
        self.pairing = tuple(pairing)
        self.norm_spatial = LayerNorm(dim)
        self.norm_freq = LayerNorm(dim)
        for i, (direction, k) in enumerate(self.pairing):
            offs = direction_offsets(direction)
            setattr(self, f"strip_spatial{i}", TapConv(dim, offs, rng))
            setattr(self, f"strip_freq{i}", TapConv(dim, offs, rng))
            setattr(self, f"row{i}", TapConv(dim, _row(k), rng))
            setattr(self, f"col{i}", TapConv(dim, _col(k), rng))
            setattr(self, f"mix{i}", Conv2d(dim, dim, 1, rng))
        self.fuse = Conv2d(len(self.pairing) * dim, dim, 1, rng)
        self.square_spatial = Conv2d(dim, dim, 3, rng)
        self.square_freq = Conv2d(dim, dim, 3, rng)

    def branch(self, i: int, spatial: Tensor, freq: Tensor) -> Tensor:
        row, col = getattr(self, f"row{i}"), getattr(self, f"col{i}")
        a = col(row(getattr(self, f"strip_spatial{i}")(spatial)))
        b = col(row(getattr(self, f"strip_freq{i}")(freq)))
        return getattr(self, f"mix{i}")(a + b)

    def forward(self, y_spatial: Tensor, y_freq: Tensor) -> Tensor:
        _, h, w = y_spatial.shape
        if h % 2 or w % 2:
            raise ShapeError(f"spatial stream must have even extents, got {h}×{w}")
        spatial = F.downsample2(y_spatial)
        if spatial.shape != y_freq.shape:
            raise ShapeError(f"downsampled spatial {spatial.shape} != frequency {y_freq.shape}")
        ns, nf = self.norm_spatial(spatial), self.norm_freq(y_freq)
        mixes = [self.branch(i, ns, nf) for i in range(len(self.pairing))]
        out = self.fuse(concat(mixes, axis=0))
        return out + self.square_spatial(spatial) + self.square_freq(y_freq)


class MSWB(Module):
    def __init__(self, dim: int, rng, reduction: int = 8, spp_sizes: Sequence[int] = (5, 9, 13)):
        self.cbam = CBAM(dim, rng, reduction)
        self.cbr_global = CBR(dim, dim, rng)
        self.spp_sizes = tuple(spp_sizes)
        self.spp_norm = LayerNorm(dim)
        self.spp_fuse = Conv2d((len(self.spp_sizes) + 1) * dim, dim, 1, rng)
        self.cbr_local = CBR(dim, dim, rng)
        self.cbr_low = CBR(dim, dim, rng)
        self.high_band_fuse = Conv2d(3 * dim, dim, 1, rng)
        self.cbr_high = CBR(dim, dim, rng)
        self.sffm_gl = SFFM(dim, rng)
        self.sffm_lh = SFFM(dim, rng)
        self.out_fuse = Conv2d(2 * dim, dim, 1, rng)

    def local(self, y: Tensor) -> Tensor:
        z = self.spp_norm(y)
        pooled = [F.max_pool2d(z, k) for k in self.spp_sizes]
        return self.spp_fuse(concat([z, *pooled], axis=0))

    def branches(self, y: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        """(y_global, y_local, y_low, y_high) feeding the two SFFMs."""
        y_global = self.cbr_global(self.cbam(y))
        y_local = self.cbr_local(self.local(y))
        pyr = haar_dwt2(y)
        y_low = self.cbr_low(pyr.ll)
        y_high = self.cbr_high(self.high_band_fuse(concat(list(pyr.details), axis=0)))
        return y_global, y_local, y_low, y_high

    def forward(self, y: Tensor) -> Tensor:
        _, h, w = y.shape
        if h % 2 or w % 2:
            raise ShapeError(f"MSWB needs even extents, got {h}×{w}")
        y_global, y_local, y_low, y_high = self.branches(y)
        y_gl = self.sffm_gl(y_global, y_low)
        y_lh = self.sffm_lh(y_local, y_high)
        return F.upsample2(self.out_fuse(concat([y_gl, y_lh], axis=0))) + y
