"""Spatial ops on unbatched C×H×W tensors: convolutions, pooling, resizing, norms, FFT."""
from __future__ import annotations

from functools import lru_cache
from typing import Sequence

import numpy as np

from .tensor import ShapeError, Tensor, add_flops, as_tensor, make_op, standardize

__all__ = [
    "conv2d",
    "depthwise_taps",
    "conv_transpose2d",
    "max_pool2d",
    "avg_pool2d",
    "resize",
    "layer_norm",
    "batch_norm",
    "fft2",
]


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _check_chw(x: Tensor, name: str = "x") -> None:
    if x.ndim != 3:
        raise ShapeError(f"{name} must be C×H×W, got shape {x.shape}")


# --------------------------------------------------------------------------- convolution


def _out_extent(n: int, k: int, stride: int, pad: int, dil: int) -> int:
    return (n + 2 * pad - dil * (k - 1) - 1) // stride + 1


def _window_slices(kh, kw, sh, sw, dh, dw, ho, wo):
    for i in range(kh):
        for j in range(kw):
            ys = slice(i * dh, i * dh + sh * (ho - 1) + 1, sh)
            xs = slice(j * dw, j * dw + sw * (wo - 1) + 1, sw)
            yield i, j, ys, xs


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, pad=0, dilation=1, groups: int = 1) -> Tensor:
    """Cross-correlation of a C_in×H×W input with a C_out×(C_in/groups)×kh×kw kernel."""
    _check_chw(x)
    if w.ndim != 4:
        raise ShapeError(f"kernel must be 4-D, got {w.shape}")
    cin, h, wd = x.shape
    cout, cg, kh, kw = w.shape
    if cin % groups or cout % groups:
        raise ShapeError(f"channels ({cin}->{cout}) not divisible by groups={groups}")
    if cg != cin // groups:
        raise ShapeError(f"kernel expects {cg * groups} input channels, got {cin}")
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"bias shape {b.shape} != ({cout},)")
    sh, sw = _pair(stride)
    ph, pw = _pair(pad)
    dh, dw = _pair(dilation)
    if ph < 0 or pw < 0:
        raise ShapeError("padding must be non-negative")
    ho = _out_extent(h, kh, sh, ph, dh)
    wo = _out_extent(wd, kw, sw, pw, dw)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d output would be empty ({ho}×{wo})")

    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw))) if ph or pw else x.data
    og = cout // groups
    if cg == 1 and og == 1:
        return _depthwise_conv(x, w, b, xp, (kh, kw, sh, sw, dh, dw, ho, wo, ph, pw))

    cols = np.empty((cin, kh, kw, ho, wo), dtype=np.result_type(x.data, w.data))
    for i, j, ys, xs in _window_slices(kh, kw, sh, sw, dh, dw, ho, wo):
        cols[:, i, j] = xp[:, ys, xs]
    k = cg * kh * kw
    cols_g = cols.reshape(groups, k, ho * wo)
    w_g = w.data.reshape(groups, og, k)
    out = w_g[0] @ cols_g[0] if groups == 1 else np.matmul(w_g, cols_g)
    out = out.reshape(cout, ho, wo)
    if b is not None:
        out = out + b.data[:, None, None]
    add_flops(2 * cout * ho * wo * k)

    inputs = (x, w) if b is None else (x, w, b)

    def bw(g):
        g_g = g.reshape(groups, og, ho * wo)
        gx = gw = gb = None
        if w.requires_grad:
            gw = np.matmul(g_g, np.swapaxes(cols_g, 1, 2)).reshape(w.shape)
        if x.requires_grad:
            dcols = np.matmul(np.swapaxes(w_g, 1, 2), g_g).reshape(cin, kh, kw, ho, wo)
            gxp = np.zeros_like(xp, dtype=dcols.dtype)
            for i, j, ys, xs in _window_slices(kh, kw, sh, sw, dh, dw, ho, wo):
                gxp[:, ys, xs] += dcols[:, i, j]
            gx = gxp[:, ph : ph + h, pw : pw + wd]
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(1, 2))
        return (gx, gw) if b is None else (gx, gw, gb)

    return make_op(out, inputs, bw)


def _depthwise_conv(x, w, b, xp, geom):
    """One filter per channel: accumulate shifted slices instead of building columns."""
    kh, kw, sh, sw, dh, dw, ho, wo, ph, pw = geom
    c, h, wd = x.shape
    taps = list(_window_slices(kh, kw, sh, sw, dh, dw, ho, wo))
    wk = w.data[:, 0]
    out = np.zeros((c, ho, wo), dtype=np.result_type(x.data, w.data))
    for i, j, ys, xs in taps:
        out += wk[:, i, j, None, None] * xp[:, ys, xs]
    if b is not None:
        out += b.data[:, None, None]
    add_flops(2 * c * ho * wo * kh * kw)

    inputs = (x, w) if b is None else (x, w, b)

    def bw(g):
        gx = gw = gb = None
        if w.requires_grad:
            gw = np.zeros(w.shape, dtype=g.dtype)
            for i, j, ys, xs in taps:
                gw[:, 0, i, j] = np.einsum("chw,chw->c", g, xp[:, ys, xs])
        if x.requires_grad:
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i, j, ys, xs in taps:
                gxp[:, ys, xs] += wk[:, i, j, None, None] * g
            gx = gxp[:, ph : ph + h, pw : pw + wd]
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(1, 2))
        return (gx, gw) if b is None else (gx, gw, gb)

    return make_op(out, inputs, bw)


def depthwise_taps(x: Tensor, w: Tensor, offsets: Sequence[tuple[int, int]], b: Tensor | None = None) -> Tensor:
    """Per-channel sum of shifted copies: out[c,y,x] = sum_t w[c,t] * x[c, y+dy_t, x+dx_t].

    Samples outside the image read as zero. Covers strip, directional and
    asymmetric depthwise kernels with arbitrary tap layouts.
    """
    _check_chw(x)
    c, h, wd = x.shape
    offsets = [(int(dy), int(dx)) for dy, dx in offsets]
    if w.shape != (c, len(offsets)):
        raise ShapeError(f"tap weights {w.shape} != ({c}, {len(offsets)})")
    py = max(abs(dy) for dy, _ in offsets)
    px = max(abs(dx) for _, dx in offsets)
    xp = np.pad(x.data, ((0, 0), (py, py), (px, px)))
    views = [(py + dy, px + dx) for dy, dx in offsets]
    out = np.zeros((c, h, wd), dtype=np.result_type(x.data, w.data))
    for t, (y0, x0) in enumerate(views):
        out += w.data[:, t, None, None] * xp[:, y0 : y0 + h, x0 : x0 + wd]
    if b is not None:
        out += b.data[:, None, None]
    add_flops(2 * c * h * wd * len(offsets))

    inputs = (x, w) if b is None else (x, w, b)

    def bw(g):
        gx = gw = gb = None
        if w.requires_grad:
            gw = np.stack(
                [np.einsum("chw,chw->c", g, xp[:, y0 : y0 + h, x0 : x0 + wd]) for y0, x0 in views], axis=1
            )
        if x.requires_grad:
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for t, (y0, x0) in enumerate(views):
                gxp[:, y0 : y0 + h, x0 : x0 + wd] += w.data[:, t, None, None] * g
            gx = gxp[:, py : py + h, px : px + wd]
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(1, 2))
        return (gx, gw) if b is None else (gx, gw, gb)

    return make_op(out, inputs, bw)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Transposed convolution with kernel size equal to stride (C_in×C_out×s×s kernel).

    Each input pixel paints a disjoint s×s output block, so H and W scale by s.
    """
    _check_chw(x)
    cin, h, wd = x.shape
    if w.ndim != 4 or w.shape[0] != cin or w.shape[2] != w.shape[3]:
        raise ShapeError(f"transposed kernel {w.shape} incompatible with input {x.shape}")
    cout, s = w.shape[1], w.shape[2]
    wm = w.data.reshape(cin, cout * s * s)
    xm = x.data.reshape(cin, h * wd)
    out = (wm.T @ xm).reshape(cout, s, s, h, wd).transpose(0, 3, 1, 4, 2).reshape(cout, h * s, wd * s)
    if b is not None:
        out = out + b.data[:, None, None]
    add_flops(2 * cin * cout * s * s * h * wd)

    inputs = (x, w) if b is None else (x, w, b)

    def bw(g):
        gm = g.reshape(cout, h, s, wd, s).transpose(0, 2, 4, 1, 3).reshape(cout * s * s, h * wd)
        gx = (wm @ gm).reshape(cin, h, wd) if x.requires_grad else None
        gw = (xm @ gm.T).reshape(w.shape) if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(1, 2))

    return make_op(out, inputs, bw)


# --------------------------------------------------------------------------- pooling


def max_pool2d(x: Tensor, k: int, stride: int = 1, pad: int | None = None) -> Tensor:
    """Max pooling; ``pad`` defaults to k//2 (same-size output at stride 1). Pads with -inf."""
    _check_chw(x)
    c, h, wd = x.shape
    pad = k // 2 if pad is None else pad
    if k > h + 2 * pad or k > wd + 2 * pad:
        raise ShapeError(f"pool window {k} larger than padded extent {(h + 2 * pad, wd + 2 * pad)}")
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)), constant_values=-np.inf)
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = win.shape[1:3]
    flat = win.reshape(c, ho, wo, k * k)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], -1)[..., 0]

    def bw(g):
        ys = np.arange(ho)[None, :, None] * stride + arg // k
        xs = np.arange(wo)[None, None, :] * stride + arg % k
        cs = np.broadcast_to(np.arange(c)[:, None, None], arg.shape)
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        np.add.at(gxp, (cs, ys, xs), g)
        return (gxp[:, pad : pad + h, pad : pad + wd],)

    return make_op(np.ascontiguousarray(out), (x,), bw)


def avg_pool2d(x: Tensor, k: int, stride: int = 1, pad: int | None = None) -> Tensor:
    """Average pooling over the valid (non-padding) samples of each window."""
    _check_chw(x)
    c, h, wd = x.shape
    pad = k // 2 if pad is None else pad
    if k > h + 2 * pad or k > wd + 2 * pad:
        raise ShapeError(f"pool window {k} larger than padded extent {(h + 2 * pad, wd + 2 * pad)}")
    ho = _out_extent(h, k, stride, pad, 1)
    wo = _out_extent(wd, k, stride, pad, 1)
    ones = np.pad(np.ones((h, wd)), pad)
    count = np.zeros((ho, wo))
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    total = np.zeros((c, ho, wo), dtype=x.dtype)
    slices = list(_window_slices(k, k, stride, stride, 1, 1, ho, wo))
    for _, _, ys, xs in slices:
        total += xp[:, ys, xs]
        count += ones[ys, xs]
    inv = (1.0 / count).astype(x.dtype)

    def bw(g):
        gs = g * inv
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        for _, _, ys, xs in slices:
            gxp[:, ys, xs] += gs
        return (gxp[:, pad : pad + h, pad : pad + wd],)

    return make_op(total * inv, (x,), bw)


# --------------------------------------------------------------------------- resize


@lru_cache(maxsize=64)
def _interp_matrix(n_in: int, n_out: int, mode: str) -> np.ndarray:
    """Row i holds the weights that output sample i takes from the inputs (half-pixel centres)."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = (i + 0.5) * scale - 0.5
        if mode == "nearest":
            m[i, min(int(np.floor((i + 0.5) * scale)), n_in - 1)] = 1.0
            continue
        src = max(src, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[i, i0] += 1.0 - frac
        m[i, i1] += frac
    m.setflags(write=False)
    return m


def resize(x: Tensor, size: tuple[int, int], mode: str = "bilinear") -> Tensor:
    """Separable bilinear or nearest resampling to ``size`` = (H', W')."""
    _check_chw(x)
    if mode not in ("bilinear", "nearest"):
        raise ValueError(f"unknown resize mode {mode!r}")
    _, h, wd = x.shape
    ho, wo = size
    if ho < 1 or wo < 1:
        raise ShapeError("resize target must be positive")
    ry = _interp_matrix(h, ho, mode).astype(x.dtype)
    rx = _interp_matrix(wd, wo, mode).astype(x.dtype)
    out = np.matmul(ry, x.data) @ rx.T

    def bw(g):
        return (np.matmul(ry.T, g) @ rx,)

    return make_op(out, (x,), bw)


def downsample2(x: Tensor) -> Tensor:
    return resize(x, (x.shape[1] // 2, x.shape[2] // 2))


def upsample2(x: Tensor) -> Tensor:
    return resize(x, (x.shape[1] * 2, x.shape[2] * 2))


# --------------------------------------------------------------------------- norms


def layer_norm(x: Tensor, weight: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the channel axis independently at every pixel, then apply the affine."""
    _check_chw(x)
    if weight.shape != (x.shape[0],):
        raise ShapeError(f"layernorm affine {weight.shape} != ({x.shape[0]},)")
    y = standardize(x, 0, eps)
    return y * weight.reshape(-1, 1, 1) + bias.reshape(-1, 1, 1)


def batch_norm(
    x: Tensor,
    weight: Tensor,
    bias: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalisation over the spatial axes (batch size is 1).

    In training mode the batch statistics are used and the running buffers are
    updated in place; in eval mode the running buffers are used.
    """
    _check_chw(x)
    c = x.shape[0]
    if weight.shape != (c,):
        raise ShapeError(f"batchnorm affine {weight.shape} != ({c},)")
    if training:
        n = x.shape[1] * x.shape[2]
        mu = x.data.mean(axis=(1, 2))
        var = x.data.var(axis=(1, 2))
        unbiased = var * n / (n - 1) if n > 1 else var
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * unbiased
        y = standardize(x, (1, 2), eps)
    else:
        inv = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype)
        y = (x - as_tensor(running_mean.reshape(-1, 1, 1).astype(x.dtype))) * inv.reshape(-1, 1, 1)
    return y * weight.reshape(-1, 1, 1) + bias.reshape(-1, 1, 1)


# --------------------------------------------------------------------------- fft


def fft2(x: Tensor) -> tuple[Tensor, Tensor]:
    """Unnormalised 2-D DFT over the last two axes, returned as (real, imag) tensors."""
    if x.ndim < 2:
        raise ShapeError("fft2 needs at least 2 dims")
    spec = np.fft.fft2(x.data)
    n = x.shape[-2] * x.shape[-1]
    dtype = x.dtype

    def _adjoint(gc: np.ndarray) -> np.ndarray:
        # real part of conj(F) applied to the complex cotangent
        return (np.fft.ifft2(gc) * n).real.astype(dtype)

    re = make_op(spec.real.astype(dtype), (x,), lambda g: (_adjoint(g),))
    im = make_op(spec.imag.astype(dtype), (x,), lambda g: (_adjoint(1j * g),))
    return re, im
