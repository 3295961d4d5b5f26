"""Attention cost versus spatial size for spectral, global and windowed attention.

Prints analytic FLOPs, the instrumented count from a real forward pass, and
the log-log slope between consecutive sizes.
"""
import argparse
import math

import numpy as np

from mtsic.attention import SMSA, SpatialMSA, flop_count
from mtsic.tensor import Tensor, count_flops


def measured(kind, side, dim, head_dim, window, rng):
    x = Tensor(rng.standard_normal((dim, side, side)).astype(np.float32))
    m = SMSA(dim, head_dim, rng) if kind == "smsa" else SpatialMSA(dim, head_dim, rng, kind=kind, window=window)
    with count_flops() as box:
        m(x)
    return box[0]


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sides", type=int, nargs="+", default=[8, 16, 32])
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--head-dim", type=int, default=8)
    p.add_argument("--window", type=int, default=8)
    p.add_argument("--no-measure", action="store_true", help="skip the instrumented forward passes")
    args = p.parse_args()

    rng = np.random.default_rng(0)
    for kind in ("smsa", "gmsa", "wmsa", "swmsa"):
        print(f"[{kind}]")
        prev = None
        for side in args.sides:
            flops = flop_count(kind, side, side, args.dim, args.head_dim, window=args.window)
            line = f"  HW={side * side:6d} analytic={flops:14d}"
            if not args.no_measure:
                line += f" measured={measured(kind, side, args.dim, args.head_dim, args.window, rng):14d}"
            if prev is not None:
                line += f" slope={math.log(flops / prev[1]) / math.log(side * side / prev[0]):.3f}"
            print(line)
            prev = (side * side, flops)


if __name__ == "__main__":
    main()
