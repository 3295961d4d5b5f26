"""Spectral multi-head self-attention (SMSA), the SARB block, and spatial
attention baselines (global / windowed / shifted-window) for ablations."""
from __future__ import annotations

import numpy as np

from .nn import FFN, Conv2d, LayerNorm, Module, uniform_init
from .tensor import (
    ShapeError,
    Tensor,
    gelu,
    l2_normalize,
    parameter,
    relu,
    reshape,
    roll,
    softmax,
    transpose,
)

__all__ = [
    "SMSA",
    "SpatialMSA",
    "SARB",
    "ATTENTION_KINDS",
    "smsa_flops",
    "spatial_msa_flops",
    "flop_count",
]

ATTENTION_KINDS = ("smsa", "gmsa", "wmsa", "swmsa")


class _Projections(Module):
    def __init__(self, dim: int, head_dim: int, rng):
        if head_dim <= 0 or dim % head_dim:
            raise ShapeError(f"dim={dim} is not divisible by head width {head_dim}")
        self.dim = dim
        self.head_dim = head_dim
        self.heads = dim // head_dim
        self.wq = uniform_init(rng, (dim, dim), dim)
        self.wk = uniform_init(rng, (dim, dim), dim)
        self.wv = uniform_init(rng, (dim, dim), dim)
        self.w_out = uniform_init(rng, (dim, dim), dim)

    def _tokens(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[0] != self.dim:
            raise ShapeError(f"expected {self.dim}×H×W input, got {x.shape}")
        c, h, w = x.shape
        return transpose(reshape(x, (c, h * w)), (1, 0))

    def _split(self, m: Tensor) -> Tensor:
        # (..., n, dim) -> (..., heads, n, head_dim)
        lead = m.shape[:-2]
        n = m.shape[-2]
        m = reshape(m, (*lead, n, self.heads, self.head_dim))
        k = len(lead)
        return transpose(m, (*range(k), k + 1, k, k + 2))

    def _merge(self, m: Tensor) -> Tensor:
        lead = m.shape[:-3]
        k = len(lead)
        n = m.shape[-2]
        m = transpose(m, (*range(k), k + 1, k, k + 2))
        return reshape(m, (*lead, n, self.dim))


class SMSA(_Projections):
    """Attention across spectral channels: every channel map is one token.

    For head j with Q_j, K_j, V_j of shape HW×C::

        A_j = softmax_keys(sigma_j K_j^T Q_j)      (C×C, columns sum to 1)
        head_j = V_j A_j

    and the block output is ``concat(head_j) W + V softmax_keys(sigma_g V^T V) + f_p(V)``
    with f_p = depthwise 3×3 -> GELU -> depthwise 3×3 on V laid out spatially.

    ``normalize`` L2-normalises Q, K (and V inside the global logits) along the
    spatial axis before the Gram products, which keeps the logits bounded
    independent of H·W.
    """

    def __init__(self, dim: int, head_dim: int, rng, normalize: bool = True, pos_enc: bool = True):
        super().__init__(dim, head_dim, rng)
        self.sigma = parameter(np.ones(self.heads))
        self.sigma_global = parameter(np.ones(1))
        self.normalize = normalize
        self.pos_enc = pos_enc
        self.pe1 = Conv2d(dim, dim, 3, rng, groups=dim)
        self.pe2 = Conv2d(dim, dim, 3, rng, groups=dim)

    def attention(self, y: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        """Return (A heads N×C×C, A_global dim×dim, V split N×HW×C, V HW×dim) for tokens ``y``."""
        q = self._split(y @ self.wq)
        k = self._split(y @ self.wk)
        v = y @ self.wv
        vh = self._split(v)
        vg = v
        if self.normalize:
            q = l2_normalize(q, axis=-2)
            k = l2_normalize(k, axis=-2)
            vg = l2_normalize(v, axis=0)
        logits = (transpose(k, (0, 2, 1)) @ q) * reshape(self.sigma, (-1, 1, 1))
        a = softmax(logits, axis=1)
        a_global = softmax((transpose(vg, (1, 0)) @ vg) * self.sigma_global, axis=0)
        return a, a_global, vh, v

    def core(self, y: Tensor) -> tuple[Tensor, Tensor]:
        """Spectral attention on an HW×dim token matrix, without position encoding."""
        a, a_global, vh, v = self.attention(y)
        out = self._merge(vh @ a) @ self.w_out + v @ a_global
        return out, v

    def forward(self, x: Tensor) -> Tensor:
        c, h, w = x.shape
        out, v = self.core(self._tokens(x))
        out = transpose(out, (1, 0))
        if self.pos_enc:
            vmap = reshape(transpose(v, (1, 0)), (c, h, w))
            out = out + reshape(self.pe2(gelu(self.pe1(vmap))), (c, h * w))
        return reshape(out, (c, h, w))


class SpatialMSA(_Projections):
    """Spatial-token attention: global (``gmsa``), windowed (``wmsa``), or
    cyclically shifted windows (``swmsa``). Columns of each attention matrix
    (one per query token) sum to 1."""

    def __init__(self, dim: int, head_dim: int, rng, kind: str = "gmsa", window: int = 8):
        super().__init__(dim, head_dim, rng)
        if kind not in ("gmsa", "wmsa", "swmsa"):
            raise ValueError(f"unknown spatial attention {kind!r}")
        self.kind = kind
        self.window = window

    def _window_size(self, h: int, w: int) -> int:
        if self.kind == "gmsa":
            return 0
        m = self.window
        if h % m or w % m:
            raise ShapeError(f"{h}×{w} not divisible by window {m}")
        return m

    def attend(self, tokens: Tensor) -> tuple[Tensor, Tensor]:
        """tokens: B×n×dim -> (output B×n×dim, attention B×heads×n_keys×n_queries)."""
        q = self._split(tokens @ self.wq)
        k = self._split(tokens @ self.wk)
        v = self._split(tokens @ self.wv)
        scale = 1.0 / np.sqrt(self.head_dim)
        a = softmax((k @ transpose(q, (0, 1, 3, 2))) * scale, axis=2)
        out = transpose(a, (0, 1, 3, 2)) @ v
        return self._merge(out) @ self.w_out, a

    def forward(self, x: Tensor) -> Tensor:
        c, h, w = x.shape
        if c != self.dim:
            raise ShapeError(f"expected {self.dim} channels, got {c}")
        m = self._window_size(h, w)
        if m == 0:
            tokens = reshape(self._tokens(x), (1, h * w, c))
            out, _ = self.attend(tokens)
            return reshape(transpose(reshape(out, (h * w, c)), (1, 0)), (c, h, w))
        shift = m // 2 if self.kind == "swmsa" else 0
        if shift:
            x = roll(x, (-shift, -shift), (1, 2))
        # C×H×W -> windows × M² × C
        win = reshape(x, (c, h // m, m, w // m, m))
        tokens = reshape(transpose(win, (1, 3, 2, 4, 0)), ((h // m) * (w // m), m * m, c))
        out, _ = self.attend(tokens)
        out = transpose(reshape(out, (h // m, w // m, m, m, c)), (4, 0, 2, 1, 3))
        out = reshape(out, (c, h, w))
        if shift:
            out = roll(out, (shift, shift), (1, 2))
        return out


class SARB(Module):
    """u = y + res(y); v = u + attn(LN(u)); out = v + FFN(LN(v))."""

    def __init__(self, dim: int, head_dim: int, rng, attention: str = "smsa", window: int = 8, normalize: bool = True):
        self.conv1 = Conv2d(dim, dim, 3, rng)
        self.conv2 = Conv2d(dim, dim, 3, rng)
        self.norm1 = LayerNorm(dim)
        if attention == "smsa":
            self.attn = SMSA(dim, head_dim, rng, normalize=normalize)
        else:
            self.attn = SpatialMSA(dim, head_dim, rng, kind=attention, window=window)
        self.norm2 = LayerNorm(dim)
        self.ffn = FFN(dim, rng)

    def forward(self, y: Tensor) -> Tensor:
        u = y + self.conv2(relu(self.conv1(y)))
        v = u + self.attn(self.norm1(u))
        return v + self.ffn(self.norm2(v))


# --------------------------------------------------------------------------- analytic FLOPs


def smsa_flops(h: int, w: int, dim: int, head_dim: int, pos_enc: bool = True) -> int:
    """Multiply-accumulate FLOPs (2 per MAC) of one SMSA forward."""
    n = h * w
    proj = 3 * 2 * n * dim * dim
    heads = (dim // head_dim) * (2 * head_dim * head_dim * n) * 2
    out = 2 * n * dim * dim
    global_branch = 2 * dim * dim * n + 2 * n * dim * dim
    pe = 2 * (2 * dim * n * 9) if pos_enc else 0
    return proj + heads + out + global_branch + pe


def spatial_msa_flops(h: int, w: int, dim: int, head_dim: int, window: int | None) -> int:
    """FLOPs of global (window=None) or windowed spatial attention."""
    n = h * w
    tokens = n if window is None else window * window
    groups = 1 if window is None else n // tokens
    proj = 4 * 2 * n * dim * dim
    attn = groups * (dim // head_dim) * 2 * (2 * tokens * tokens * head_dim)
    return proj + attn


def flop_count(kind: str, h: int, w: int, dim: int, head_dim: int, window: int = 8) -> int:
    if kind == "smsa":
        return smsa_flops(h, w, dim, head_dim)
    if kind == "gmsa":
        return spatial_msa_flops(h, w, dim, head_dim, None)
    if kind in ("wmsa", "swmsa"):
        return spatial_msa_flops(h, w, dim, head_dim, window)
    raise ValueError(f"unknown attention kind {kind!r}")
