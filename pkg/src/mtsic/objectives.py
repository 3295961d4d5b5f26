"""Training objective: adversarial, pixel, spectral-angle, frequency, edge,
perceptual, total-variation and SSIM terms, and their weighted sum."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from functools import lru_cache

import numpy as np

from . import functional as F
from .discriminator import DiscOutput, Discriminator
from .tensor import (
    ShapeError,
    Tensor,
    arccos,
    as_tensor,
    clip,
    concat,
    reshape,
    safe_sqrt,
    softplus,
    tabs,
)

__all__ = [
    "LossWeights",
    "LossReport",
    "LOSS_TERMS",
    "cgan_losses",
    "pixel_l1",
    "sam_loss",
    "fft_loss",
    "edge_loss",
    "tv_loss",
    "gaussian_window",
    "ssim_map",
    "ssim_loss",
    "perceptual_loss",
    "feature_l1",
    "disc_loss",
    "gen_adv_loss",
    "total_loss",
]

LOSS_TERMS = ("cgan", "pix", "sam", "fft", "edge", "per", "tv", "ssim")


@dataclass(frozen=True)
class LossWeights:
    cgan: float = 1.0
    pix: float = 50.0
    sam: float = 0.1
    fft: float = 1.0
    edge: float = 0.5
    per: float = 1.0
    tv: float = 1.0
    ssim: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"loss weight {f.name} must be non-negative")

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


@dataclass
class LossReport:
    terms: dict[str, Tensor]
    weights: LossWeights
    total: Tensor

    def values(self) -> dict[str, float]:
        out = {name: float(t.item()) for name, t in self.terms.items()}
        out["total"] = float(self.total.item())
        return out

    def first_non_finite(self) -> str | None:
        for name, v in self.values().items():
            if not np.isfinite(v):
                return name
        return None


def _scores(s) -> Tensor:
    return s.scores if isinstance(s, DiscOutput) else s


def _check_pair(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")


def cgan_losses(scores_real, scores_fake) -> tuple[Tensor, Tensor]:
    """(discriminator loss, non-saturating generator loss) from raw logits."""
    real, fake = _scores(scores_real), _scores(scores_fake)
    _check_pair(real, fake)
    loss_d = softplus(-real).mean() + softplus(fake).mean()
    loss_g = softplus(-fake).mean()
    return loss_d, loss_g


def disc_loss(scores_real, scores_fake) -> Tensor:
    real, fake = _scores(scores_real), _scores(scores_fake)
    _check_pair(real, fake)
    return softplus(-real).mean() + softplus(fake).mean()


def gen_adv_loss(scores_fake) -> Tensor:
    return softplus(-_scores(scores_fake)).mean()


def pixel_l1(gen: Tensor, gt) -> Tensor:
    gt = as_tensor(gt, gen)
    _check_pair(gen, gt)
    return tabs(gen - gt).mean()


def sam_loss(gen: Tensor, gt, eps: float = 1e-8) -> Tensor:
    """Mean per-pixel angle (radians) between the channel vectors."""
    gt = as_tensor(gt, gen)
    _check_pair(gen, gt)
    dot = (gen * gt).sum(axis=0)
    norms = safe_sqrt((gen * gen).sum(axis=0)) * safe_sqrt((gt * gt).sum(axis=0))
    # eps floors the denominator (zero vectors) without biasing parallel vectors away from angle 0
    return arccos(clip(dot / clip(norms, eps, np.inf), -1.0, 1.0)).mean()


def fft_loss(gen: Tensor, gt) -> Tensor:
    """Per channel (sum |dRe| + sum |dIm|) / HW over the 2-D DFT, averaged over channels."""
    gt = as_tensor(gt, gen)
    _check_pair(gen, gt)
    c, h, w = gen.shape
    re, im = F.fft2(gen - gt)
    per_channel = (tabs(re).sum(axis=(1, 2)) + tabs(im).sum(axis=(1, 2))) * (1.0 / (h * w))
    return per_channel.mean()


_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])


def sobel_magnitude(x: Tensor, eps: float = 1e-6) -> Tensor:
    """Per-channel Sobel gradient magnitude over the valid region ((H-2)×(W-2))."""
    c = x.shape[0]
    k = np.stack([_SOBEL_X, _SOBEL_X.T])  # x then y
    w = as_tensor(np.tile(k[:, None], (c, 1, 1, 1)), x)
    g = F.conv2d(x, w, groups=c)
    gx, gy = g[0::2], g[1::2]
    return safe_sqrt(gx * gx + gy * gy + eps)


def edge_loss(gen: Tensor, gt, eps: float = 1e-6) -> Tensor:
    gt = as_tensor(gt, gen)
    _check_pair(gen, gt)
    return tabs(sobel_magnitude(gen, eps) - sobel_magnitude(gt, eps)).mean()


def tv_loss(x: Tensor) -> Tensor:
    """Anisotropic total variation: mean |forward x-difference| + mean |forward y-difference|."""
    dx = x[:, :, 1:] - x[:, :, :-1]
    dy = x[:, 1:, :] - x[:, :-1, :]
    return tabs(dx).mean() + tabs(dy).mean()


@lru_cache(maxsize=8)
def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    g /= g.sum()
    win = np.outer(g, g)
    win.setflags(write=False)
    return win


def ssim_map(a: Tensor, b, data_range: float, size: int = 11, sigma: float = 1.5) -> Tensor:
    """Per-channel SSIM map over the valid region of a Gaussian-weighted window."""
    b = as_tensor(b, a)
    _check_pair(a, b)
    c, h, w = a.shape
    if h < size or w < size:
        raise ShapeError(f"SSIM window {size} exceeds image extent {h}×{w}")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    win = gaussian_window(size, sigma)
    stacked = concat([a, b, a * a, b * b, a * b], axis=0)
    kernel = as_tensor(np.broadcast_to(win, (5 * c, 1, size, size)).copy(), a)
    filt = F.conv2d(stacked, kernel, groups=5 * c)
    mu_a, mu_b, e_aa, e_bb, e_ab = (filt[i * c : (i + 1) * c] for i in range(5))
    mu_aa, mu_bb, mu_ab = mu_a * mu_a, mu_b * mu_b, mu_a * mu_b
    var_a, var_b, cov = e_aa - mu_aa, e_bb - mu_bb, e_ab - mu_ab
    num = (mu_ab * 2.0 + c1) * (cov * 2.0 + c2)
    den = (mu_aa + mu_bb + c1) * (var_a + var_b + c2)
    return num / den


def ssim_loss(gen: Tensor, gt, data_range: float = 2.0) -> Tensor:
    return 1.0 - ssim_map(gen, gt, data_range).mean()


def perceptual_loss(gen: Tensor, gt, cond, disc: Discriminator) -> Tensor:
    """Mean L1 distance between discriminator trunk features, averaged over scales.

    The caller freezes ``disc`` (``requires_grad_(False)``) across the
    generator step so only the generator receives gradient.
    """
    gt = as_tensor(gt, gen)
    cond = as_tensor(cond, gen)
    _check_pair(gen, gt)
    return feature_l1(disc.trunk(gen, cond), [f.detach() for f in disc.trunk(gt, cond)])


def feature_l1(fake: list[Tensor], real: list[Tensor]) -> Tensor:
    """Mean absolute feature difference per scale, averaged over scales."""
    if len(fake) != len(real) or not fake:
        raise ShapeError(f"feature lists differ in length ({len(fake)} vs {len(real)})")
    total = None
    for f, r in zip(fake, real):
        term = tabs(f - r).mean()
        total = term if total is None else total + term
    return total * (1.0 / len(fake))


def total_loss(terms: dict[str, Tensor], weights: LossWeights | None = None) -> LossReport:
    """Weighted sum of the named terms; missing terms count as zero."""
    weights = weights or LossWeights()
    unknown = set(terms) - set(LOSS_TERMS)
    if unknown:
        raise KeyError(f"unknown loss terms {sorted(unknown)}")
    w = weights.as_dict()
    total = None
    for name in LOSS_TERMS:
        if name not in terms:
            continue
        t = terms[name] * w[name]
        total = t if total is None else total + t
    if total is None:
        total = as_tensor(np.zeros(()))
    return LossReport(terms=dict(terms), weights=weights, total=reshape(total, ()))
