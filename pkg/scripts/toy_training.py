"""Train the toy configuration and compare against the untrained model on held-out scenes.

    python3 scripts/toy_training.py --iters 200 --out runs/toy
"""
import argparse
import time
from pathlib import Path

from mtsic.config import TrainConfig
from mtsic.data import generate_dataset, load_pairs
from mtsic.evaluate import evaluate_model
from mtsic.train import build_models, train_on_pairs


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--stages", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-scenes", type=int, default=6)
    p.add_argument("--train-size", type=int, default=112)
    p.add_argument("--out", default="runs/toy")
    args = p.parse_args()

    out = Path(args.out)
    generate_dataset(out / "train", seed=1, count=args.train_scenes, bands=8, size=args.train_size)
    generate_dataset(out / "test", seed=2, count=3, bands=8, size=64)
    train, test = load_pairs(out / "train"), load_pairs(out / "test")

    cfg = TrainConfig(lr=args.lr, iters=args.iters, stages=args.stages, seed=args.seed)
    t0 = time.perf_counter()
    res = train_on_pairs(cfg, train, out / "run")
    elapsed = time.perf_counter() - t0

    pix = res.trace("pix")
    window = min(20, len(pix))
    first, last = pix[:window].mean(), pix[-window:].mean()
    untrained, _ = build_models(cfg)
    before = evaluate_model(untrained, test).aggregate()
    after = evaluate_model(res.generator, test).aggregate()
    print(f"{args.iters} iterations in {elapsed:.0f}s ({elapsed / max(args.iters, 1):.2f}s/iter)")
    print(f"pixel L1 trailing mean: {first:.4f} -> {last:.4f} ({100 * last / first:.0f}%)")
    for name in after:
        print(f"{name:9s} untrained {before[name]:8.4f}   trained {after[name]:8.4f}")
    print(f"checkpoint: {res.checkpoint}")


if __name__ == "__main__":
    main()
