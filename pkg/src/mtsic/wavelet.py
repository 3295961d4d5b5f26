"""Single-level orthonormal 2-D Haar analysis and synthesis.

For each non-overlapping 2×2 block [a b; c d]::

    ll = (a + b + c + d) / 2      lh = (a - b + c - d) / 2
    hl = (a + b - c - d) / 2      hh = (a - b - c + d) / 2

The transform is its own inverse up to re-interleaving, and preserves energy.
"""
from __future__ import annotations

from dataclasses import dataclass

from .tensor import ShapeError, Tensor, concat, reshape, transpose

__all__ = ["WaveletPyramid", "haar_dwt2", "haar_idwt2"]


@dataclass
class WaveletPyramid:
    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor

    def __post_init__(self):
        shapes = {t.shape for t in (self.ll, self.lh, self.hl, self.hh)}
        if len(shapes) != 1:
            raise ShapeError(f"subband shapes disagree: {sorted(shapes)}")

    @property
    def details(self) -> tuple[Tensor, Tensor, Tensor]:
        return self.lh, self.hl, self.hh

    def energy(self) -> float:
        return float(sum((t.data.astype("float64") ** 2).sum() for t in (self.ll, self.lh, self.hl, self.hh)))


def _blocks(x: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    c, h, w = x.shape
    # C×H×W -> C×(H/2)×2×(W/2)×2 -> 2×2×C×(H/2)×(W/2)
    b = transpose(reshape(x, (c, h // 2, 2, w // 2, 2)), (2, 4, 0, 1, 3))
    return b[0, 0], b[0, 1], b[1, 0], b[1, 1]


def haar_dwt2(x: Tensor) -> WaveletPyramid:
    if x.ndim != 3:
        raise ShapeError(f"expected C×H×W, got {x.shape}")
    _, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"Haar analysis needs even extents, got {h}×{w}")
    a, b, c, d = _blocks(x)
    s, t = a + b, c + d
    u, v = a - b, c - d
    return WaveletPyramid(ll=(s + t) * 0.5, lh=(u + v) * 0.5, hl=(s - t) * 0.5, hh=(u - v) * 0.5)


def haar_idwt2(p: WaveletPyramid) -> Tensor:
    ll, lh, hl, hh = p.ll, p.lh, p.hl, p.hh
    if ll.ndim != 3:
        raise ShapeError(f"subbands must be C×h×w, got {ll.shape}")
    c, h, w = ll.shape
    s, t = ll + hl, ll - hl
    u, v = lh + hh, lh - hh
    a, b = (s + u) * 0.5, (s - u) * 0.5
    cc, d = (t + v) * 0.5, (t - v) * 0.5
    # 2×2×C×h×w -> C×h×2×w×2
    stacked = concat([reshape(z, (1, c, h, w)) for z in (a, b, cc, d)], axis=0)
    blocks = transpose(reshape(stacked, (2, 2, c, h, w)), (2, 3, 0, 4, 1))
    return reshape(blocks, (c, 2 * h, 2 * w))
