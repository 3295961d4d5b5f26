"""Sweep the number of cascaded stages under identical seeds and iteration budgets.

Reports parameter count and held-out metrics per stage count.
"""
import argparse
from pathlib import Path

from mtsic.config import TrainConfig
from mtsic.data import generate_dataset, load_pairs
from mtsic.evaluate import evaluate_model
from mtsic.generator import MTSIC
from mtsic.train import train_on_pairs


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--stages", type=int, nargs="+", default=[1, 2, 3, 4])
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--out", default="runs/stages")
    args = p.parse_args()

    out = Path(args.out)
    generate_dataset(out / "train", seed=1, count=6, bands=8, size=112)
    generate_dataset(out / "test", seed=2, count=3, bands=8, size=64)
    train, test = load_pairs(out / "train"), load_pairs(out / "test")

    print(f"{'stages':>6} {'params':>9} {'psnr':>8} {'ssim':>7} {'uiqi':>7} {'colorjsd':>9}")
    for n in args.stages:
        cfg = TrainConfig(lr=args.lr, iters=args.iters, stages=n)
        params = MTSIC(cfg.generator(), 0).num_parameters()
        res = train_on_pairs(cfg, train)
        agg = evaluate_model(res.generator, test).aggregate()
        print(f"{n:>6} {params:>9} {agg['psnr']:>8.3f} {agg['ssim']:>7.4f} {agg['uiqi']:>7.4f} {agg['colorjsd']:>9.4f}")


if __name__ == "__main__":
    main()
