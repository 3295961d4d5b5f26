"""Finite-difference gradient checking.

The analytic gradient is taken at whatever precision the inputs/parameters
carry. The numerical reference always runs in float64 with a five-point central
stencil, so a float32 check measures the float32 backward pass against an
accurate derivative rather than against float32 cancellation noise.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, tsum

__all__ = ["relative_error", "grad_check", "grad_check_params"]


def relative_error(analytic: np.ndarray, numeric: np.ndarray, resolution: float = 0.0) -> float:
    """max |a - n| / max(|a|, |n|, 1e-8), ignoring disagreement below ``resolution``."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    return float(np.max(np.maximum(np.abs(a - n) - resolution, 0.0) / denom))


def _resolution(f0: float, eps: float) -> float:
    # round-off floor of the five-point quotient evaluated in float64
    return 16 * np.finfo(np.float64).eps * (1.0 + abs(f0)) / eps


def _analytic_floor(analytic: np.ndarray) -> float:
    # round-off of the analytic pass itself, relative to its largest component
    a = np.asarray(analytic)
    if a.size == 0:
        return 0.0
    return 8 * float(np.finfo(a.dtype).eps) * float(np.abs(a).max())


def _scalarize(out: Tensor, proj: np.ndarray | None) -> Tensor:
    if out.size == 1:
        return tsum(out)
    return tsum(out * proj.astype(out.dtype, copy=False))


def _projection(f, x: Tensor, seed: int) -> np.ndarray | None:
    out = f(Tensor._wrap(x.data))
    if out.size == 1:
        return None
    return np.random.default_rng(seed).standard_normal(out.shape)


def _pick(sizes: Sequence[int], max_components: int | None, rng) -> list[tuple[int, int]]:
    pairs = [(i, j) for i, n in enumerate(sizes) for j in range(n)]
    if max_components is None or len(pairs) <= max_components:
        return pairs
    chosen = rng.choice(len(pairs), size=max_components, replace=False)
    return [pairs[k] for k in sorted(chosen)]


def _five_point(evaluate: Callable[[], float], arr: np.ndarray, j: int, eps: float) -> float:
    flat = arr.reshape(-1)
    orig = flat[j]
    vals = []
    for step in (2, 1, -1, -2):
        flat[j] = orig + step * eps
        vals.append(evaluate())
    flat[j] = orig
    fp2, fp1, fm1, fm2 = vals
    return (-fp2 + 8 * fp1 - 8 * fm1 + fm2) / (12 * eps)


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = 1e-4,
    *,
    max_components: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between the tape gradient of ``f`` at ``x`` and finite differences.

    Non-scalar outputs are reduced with a fixed random projection first.
    """
    proj = _projection(f, x, seed)

    leaf = Tensor(x.data, requires_grad=True)
    with Tape() as tape:
        s = _scalarize(f(leaf), proj)
    tape.backward(s)
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)

    x64 = x.data.astype(np.float64)
    probe = Tensor._wrap(x64)

    def evaluate() -> float:
        return float(_scalarize(f(probe), proj).data)

    rng = np.random.default_rng(seed + 1)
    idx = [j for _, j in _pick([x64.size], max_components, rng)]
    numeric = np.array([_five_point(evaluate, x64, j, eps) for j in idx])
    floor = _resolution(evaluate(), eps) + _analytic_floor(analytic)
    return relative_error(analytic.reshape(-1)[idx], numeric, floor)


def grad_check_params(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-4,
    *,
    constants: Sequence[Tensor] = (),
    max_components: int | None = None,
    seed: int = 0,
) -> float:
    """Like :func:`grad_check`, but w.r.t. parameter leaves captured by ``loss_fn``.

    ``loss_fn`` must return a scalar. For the numerical pass every parameter and
    every tensor in ``constants`` is temporarily promoted to float64.
    """
    params = list(params)
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    analytic = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]

    saved = [(t, t.data) for t in [*params, *constants]]
    try:
        for t, data in saved:
            t.data = data.astype(np.float64)
        rng = np.random.default_rng(seed + 1)
        picks = _pick([p.size for p in params], max_components, rng)

        def evaluate() -> float:
            return float(loss_fn().data)

        res = _resolution(evaluate(), eps) + max(_analytic_floor(a) for a in analytic)
        errs_a, errs_n = [], []
        for i, j in picks:
            errs_n.append(_five_point(evaluate, params[i].data, j, eps))
            errs_a.append(analytic[i].reshape(-1)[j])
    finally:
        for t, data in saved:
            t.data = data
        for p in params:
            p.grad = None
    return relative_error(np.array(errs_a), np.array(errs_n), res)
