"""Command-line entry point: gen-data, train, eval, colorize, selftest."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields

from .config import ConfigError, TrainConfig, load_config

__all__ = ["main", "build_parser"]


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    group = p.add_argument_group("config overrides (take precedence over --config)")
    for f in fields(TrainConfig):
        group.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}", default=None, metavar=f.type.upper())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtsic", description="Spectral infrared colorization toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write synthetic cube/PNG pairs")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--count", type=int, default=8)
    g.add_argument("--bands", type=int, default=8)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--noise", type=float, default=0.01)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train generator and discriminator")
    t.add_argument("--config", default=None, help="key=value config file")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    _add_config_flags(t)

    e = sub.add_parser("eval", help="evaluate a checkpoint on held-out pairs")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True)

    c = sub.add_parser("colorize", help="colorize one cube into a PNG")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--in", dest="inp", required=True)
    c.add_argument("--out", required=True)

    sub.add_parser("selftest", help="gradient checks and invariants; nonzero exit on failure")
    return parser


def resolve_config(args: argparse.Namespace) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    return cfg.override(**overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    try:
        if args.command == "gen-data":
            from .data import generate_dataset

            names = generate_dataset(args.out, args.seed, args.count, args.bands, args.size, args.noise)
            print(f"wrote {len(names)} scenes to {args.out}")
        elif args.command == "train":
            from .train import train

            cfg = resolve_config(args)
            res = train(cfg, args.data, args.out)
            last = res.history[-1] if res.history else {}
            print(f"trained {len(res.history)} iterations; final total={last.get('total', float('nan')):.4f}")
            print(f"checkpoint: {res.checkpoint}")
        elif args.command == "eval":
            from .evaluate import evaluate

            rep = evaluate(args.checkpoint, args.data, args.report)
            agg = rep.aggregate()
            print(" ".join(f"{k}={v:.4f}" for k, v in agg.items()))
        elif args.command == "colorize":
            from .evaluate import colorize

            colorize(args.checkpoint, args.inp, args.out)
            print(f"wrote {args.out}")
        elif args.command == "selftest":
            from .selftest import run_selftest

            return 0 if run_selftest() else 1
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
