"""Quick gradient-check and invariant suite used by ``mtsic selftest``."""
from __future__ import annotations

import math
import time
from typing import Callable

import numpy as np

from . import functional as F
from . import objectives as O
from .attention import SARB, SMSA
from .discriminator import DiscConfig, Discriminator
from .gradcheck import grad_check, grad_check_params
from .metrics import colorjsd, psnr, uiqi
from .mswb import MSWB, SFFM
from .tensor import Tensor, gelu, precision, softmax, tensor
from .wavelet import haar_dwt2, haar_idwt2

__all__ = ["run_selftest", "CHECKS"]


def _rng():
    return np.random.default_rng(1234)


def _grad_ops() -> float:
    rng = _rng()
    x = tensor(rng.standard_normal((3, 6, 6)))
    w = tensor(rng.standard_normal((4, 3, 3, 3)))
    errs = [
        grad_check(lambda t: F.conv2d(t, w, pad=1), x),
        grad_check(lambda t: softmax(t, axis=0), x),
        grad_check(gelu, x),
        grad_check(lambda t: F.resize(t, (12, 12)), x),
        grad_check(lambda t: F.fft2(t)[0] + F.fft2(t)[1], x),
    ]
    return max(errs)


def _grad_blocks() -> float:
    rng = _rng()
    sarb = SARB(8, 4, rng)
    y = tensor(rng.standard_normal((8, 6, 6)))
    mswb = MSWB(4, rng)
    z = tensor(rng.standard_normal((4, 8, 8)))
    return max(
        grad_check_params(lambda: sarb(y).sum(), sarb.parameters(), max_components=40),
        grad_check(lambda t: mswb(t), z, max_components=40),
    )


def _grad_losses() -> float:
    rng = _rng()
    gen = tensor(rng.uniform(-1, 1, (3, 12, 12)))
    gt = np.clip(gen.data + rng.choice([-0.3, 0.3], gen.shape), -1, 1)
    d = Discriminator(DiscConfig(bands=2, scales=2, base_channels=4, hidden=4), rng)
    cond = rng.standard_normal((2, 12, 12))
    fns: list[Callable[[Tensor], Tensor]] = [
        lambda a: O.pixel_l1(a, gt),
        lambda a: O.sam_loss(a, gt),
        lambda a: O.fft_loss(a, gt),
        # a halved target keeps the two Sobel magnitudes apart, away from the |.| kink
        lambda a: O.edge_loss(a, 0.5 * gen.data),
        lambda a: O.ssim_loss(a, gt),
        lambda a: O.perceptual_loss(a, gt, cond, d),
    ]
    return max(grad_check(f, gen, max_components=30) for f in fns)


def _softmax_columns() -> float:
    rng = _rng()
    a, _, _, _ = SMSA(8, 4, rng).attention(tensor(rng.standard_normal((16, 8))))
    return float(np.abs(a.data.sum(axis=1) - 1).max())


def _wavelet_roundtrip() -> float:
    x = tensor(_rng().standard_normal((2, 8, 8)))
    return float(np.abs(haar_idwt2(haar_dwt2(x)).data - x.data).max())


def _mswb_zero_identity() -> float:
    m = MSWB(4, _rng()).zero_()
    y = tensor(_rng().standard_normal((4, 8, 8)))
    return float(np.abs(m(y).data - y.data).max())


def _sffm_zero() -> float:
    m = SFFM(4, _rng()).zero_()
    return float(np.abs(m(tensor(np.zeros((4, 8, 8))), tensor(np.zeros((4, 4, 4)))).data).max())


def _metric_closed_forms() -> float:
    gt = _rng().uniform(0.1, 1.0, (1, 16, 16))
    return max(
        abs(psnr(np.zeros((4, 4)), np.ones((4, 4)), 255.0) - 20 * math.log10(255)),
        abs(uiqi(gt, 2 * gt, window=None) - 0.64),
        abs(colorjsd([0.5, 0.5], [1.0, 0.0]) - 0.31127812445913283),
        abs(colorjsd([1.0, 0.0], [0.0, 1.0]) - 1.0),
    )


# (name, function returning an error measure, tolerance)
CHECKS = [
    ("grad.ops", _grad_ops, 1e-5),
    ("grad.blocks", _grad_blocks, 1e-5),
    ("grad.losses", _grad_losses, 1e-5),
    ("attention.columns_sum_to_one", _softmax_columns, 1e-6),
    ("wavelet.round_trip", _wavelet_roundtrip, 1e-12),
    ("mswb.zero_params_identity", _mswb_zero_identity, 0.0),
    ("sffm.zero_in_zero_out", _sffm_zero, 0.0),
    ("metrics.closed_forms", _metric_closed_forms, 1e-3),
]


def run_selftest(echo: Callable[[str], None] = print) -> bool:
    ok = True
    with precision(np.float64):
        for name, fn, tol in CHECKS:
            t0 = time.perf_counter()
            try:
                err = fn()
                passed = err <= tol
                detail = f"err={err:.3g} tol={tol:g}"
            except Exception as exc:  # report and keep going
                passed, detail = False, f"{type(exc).__name__}: {exc}"
            ok &= passed
            echo(f"{'PASS' if passed else 'FAIL'} {name} {detail} ({time.perf_counter() - t0:.1f}s)")
    echo("selftest " + ("passed" if ok else "FAILED"))
    return ok
