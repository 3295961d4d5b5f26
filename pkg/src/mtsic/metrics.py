"""Colorization quality metrics on [0,1]-range 3×H×W numpy images."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .objectives import ssim_map
from .tensor import ShapeError, Tensor

__all__ = [
    "METRIC_NAMES",
    "psnr",
    "ssim_metric",
    "uiqi",
    "colorful",
    "ColorHistogram",
    "color_histogram",
    "colorjsd",
    "image_metrics",
    "MetricReport",
]

METRIC_NAMES = ("psnr", "ssim", "uiqi", "colorful", "colorjsd")


def _arr(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr(gen, gt, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give ``math.inf``."""
    a, b = _pair(gen, gt)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def ssim_metric(gen, gt, data_range: float = 1.0) -> float:
    a, b = _pair(gen, gt)
    if a.ndim == 2:
        a, b = a[None], b[None]
    return float(ssim_map(Tensor(a), Tensor(b), data_range).data.mean())


def _window_stats(a: np.ndarray, b: np.ndarray, window: int | None):
    if window is None:
        axes = (-2, -1)
        wa, wb = a, b
    else:
        h, w = a.shape[-2:]
        if window > h or window > w:
            raise ShapeError(f"window {window} exceeds extent {h}×{w}")
        wa = sliding_window_view(a, (window, window), axis=(-2, -1))
        wb = sliding_window_view(b, (window, window), axis=(-2, -1))
        axes = (-2, -1)
    mu_a, mu_b = wa.mean(axis=axes), wb.mean(axis=axes)
    da = wa - mu_a[..., None, None]
    db = wb - mu_b[..., None, None]
    return mu_a, mu_b, (da * da).mean(axis=axes), (db * db).mean(axis=axes), (da * db).mean(axis=axes)


def uiqi(gen, gt, window: int | None = 8, eps: float = 1e-12) -> float:
    """Universal image quality index averaged over sliding windows (``window=None``: whole image).

    Written as (structure*contrast) * luminance = 2cov/(var_a+var_b) * 2mu_a mu_b/(mu_a^2+mu_b^2),
    each factor guarded by ``eps``, so constant windows score by luminance alone.
    """
    a, b = _pair(gen, gt)
    mu_a, mu_b, var_a, var_b, cov = _window_stats(a, b, window)
    q = ((2 * cov + eps) / (var_a + var_b + eps)) * ((2 * mu_a * mu_b + eps) / (mu_a**2 + mu_b**2 + eps))
    return float(q.mean())


def colorful(img, scale: float = 1.0) -> float:
    """Opponent-colour colourfulness of a [0,1] RGB image; ``scale`` divides the raw value."""
    x = _arr(img)
    if x.ndim != 3 or x.shape[0] != 3:
        raise ShapeError(f"expected 3×H×W, got {x.shape}")
    r, g, b = x
    rg = r - g
    yb = 0.5 * (r + g) - b
    raw = math.sqrt(rg.var() + yb.var()) + 0.3 * math.sqrt(rg.mean() ** 2 + yb.mean() ** 2)
    return raw / scale


@dataclass
class ColorHistogram:
    probs: np.ndarray  # bins³, smoothed, sums to 1
    counts: np.ndarray  # bins³ raw pixel counts
    bins: int

    @property
    def raw(self) -> np.ndarray:
        return self.counts / self.counts.sum()


def color_histogram(img, bins: int = 16, value_range: tuple[float, float] = (0.0, 1.0), eps: float = 1e-12) -> ColorHistogram:
    x = _arr(img)
    if x.ndim != 3 or x.shape[0] != 3:
        raise ShapeError(f"expected 3×H×W, got {x.shape}")
    lo, hi = value_range
    idx = np.clip(np.floor((x - lo) / (hi - lo) * bins), 0, bins - 1).astype(np.int64)
    flat = (idx[0] * bins + idx[1]) * bins + idx[2]
    counts = np.bincount(flat.ravel(), minlength=bins**3).astype(np.float64)
    p = counts / counts.sum() + eps
    return ColorHistogram(probs=p / p.sum(), counts=counts, bins=bins)


def _probs(h) -> np.ndarray:
    p = h.probs if isinstance(h, ColorHistogram) else np.asarray(h, dtype=np.float64)
    if np.any(p < 0):
        raise ValueError("histogram has negative mass")
    return p


def _kl2(p: np.ndarray, m: np.ndarray) -> float:
    nz = p > 0
    return float(np.sum(p[nz] * np.log2(p[nz] / m[nz])))


def colorjsd(p, q) -> float:
    """Base-2 Jensen-Shannon divergence between two colour histograms, in [0,1]."""
    p, q = _probs(p), _probs(q)
    if p.shape != q.shape:
        raise ShapeError(f"histogram shapes differ: {p.shape} vs {q.shape}")
    m = 0.5 * (p + q)
    jsd = 0.5 * _kl2(p, m) + 0.5 * _kl2(q, m)
    return min(max(jsd, 0.0), 1.0)


def image_metrics(gen, gt, bins: int = 16) -> dict[str, float]:
    """All five metrics for one [0,1] image pair (colorful is measured on ``gen``)."""
    a, b = _pair(gen, gt)
    return {
        "psnr": psnr(a, b),
        "ssim": ssim_metric(a, b),
        "uiqi": uiqi(a, b),
        "colorful": colorful(a),
        "colorjsd": colorjsd(color_histogram(a, bins), color_histogram(b, bins)),
    }


def _fmt(v: float) -> str:
    return "inf" if v == math.inf else repr(float(v))


@dataclass
class MetricReport:
    records: list[tuple[str, dict[str, float]]] = field(default_factory=list)

    def add(self, name: str, values: dict[str, float]) -> None:
        self.records.append((name, dict(values)))

    def aggregate(self) -> dict[str, float]:
        if not self.records:
            return {k: math.nan for k in METRIC_NAMES}
        return {k: float(np.mean([v[k] for _, v in self.records])) for k in METRIC_NAMES}

    def to_text(self) -> str:
        lines = []
        for name, vals in self.records:
            fields_ = " ".join(f"{k}={_fmt(vals[k])}" for k in METRIC_NAMES)
            lines.append(f"record=image name={name} {fields_}")
        agg = " ".join(f"{k}={_fmt(v)}" for k, v in self.aggregate().items())
        lines.append(f"record=aggregate count={len(self.records)} {agg}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MetricReport":
        rep = cls()
        for line in text.splitlines():
            kv = dict(tok.split("=", 1) for tok in line.split())
            if kv.get("record") == "image":
                rep.add(kv["name"], {k: float(kv[k]) for k in METRIC_NAMES})
        return rep
