"""Alternating discriminator / generator training on patch crops."""
from __future__ import annotations

import contextlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import objectives as O
from .checkpoint import save_checkpoint
from .config import TrainConfig, lr_at
from .data import PatchSampler, load_pairs, to_signed
from .discriminator import Discriminator
from .generator import MTSIC
from .optim import Adam
from .tensor import NonFiniteError, Tape, Tensor, precision

__all__ = ["TrainResult", "build_models", "train", "train_on_pairs", "format_record", "parse_log"]

log = logging.getLogger(__name__)

LOG_FIELDS = ("iter", "epoch", "lr", "disc", *O.LOSS_TERMS, "total")


@dataclass
class TrainResult:
    cfg: TrainConfig
    generator: MTSIC
    discriminator: Discriminator
    history: list[dict[str, float]] = field(default_factory=list)
    checkpoint: Path | None = None

    def trace(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.history])


def _dtype_scope(cfg: TrainConfig):
    return precision(np.float64) if cfg.precision == "float64" else contextlib.nullcontext()


def build_models(cfg: TrainConfig) -> tuple[MTSIC, Discriminator]:
    with _dtype_scope(cfg):
        seeds = np.random.SeedSequence(cfg.seed).spawn(2)
        gen = MTSIC(cfg.generator(), np.random.default_rng(seeds[0]))
        disc = Discriminator(cfg.discriminator(), np.random.default_rng(seeds[1]))
    return gen, disc


def format_record(rec: dict[str, float]) -> str:
    parts = []
    for k in LOG_FIELDS:
        v = rec[k]
        parts.append(f"{k}={v}" if k in ("iter", "epoch") else f"{k}={float(v)!r}")
    return " ".join(parts)


def parse_log(text: str) -> list[dict[str, float]]:
    out = []
    for line in text.splitlines():
        if line.strip():
            out.append({k: float(v) for k, v in (tok.split("=", 1) for tok in line.split())})
    return out


def _raise_non_finite(rec: dict[str, float]) -> None:
    for k in ("disc", *O.LOSS_TERMS, "total"):
        if k in rec and not np.isfinite(rec[k]):
            raise NonFiniteError(f"loss term '{k}' is non-finite ({rec[k]})")


def train_step(gen, disc, opt_g, opt_d, cube: Tensor, rgb: Tensor, weights: O.LossWeights) -> dict[str, float]:
    """One D update followed by one G update on a single (cube, rgb in [-1,1]) pair."""
    gen_tape = Tape()
    with gen_tape:
        fake = gen(cube)

    with Tape() as d_tape:
        real_scores = disc(rgb, cube)
        fake_scores = disc(fake.detach(), cube)
        loss_d = O.disc_loss(real_scores, fake_scores)
    _raise_non_finite({"disc": loss_d.item()})
    d_tape.backward(loss_d)
    opt_d.step()
    opt_d.zero_grad()

    disc.requires_grad_(False)
    try:
        with gen_tape:
            feats = disc.trunk(fake, cube)
            real_feats = [f.detach() for f in disc.trunk(rgb, cube)]
            terms = {
                "cgan": O.gen_adv_loss(disc.heads(feats)),
                "pix": O.pixel_l1(fake, rgb),
                "sam": O.sam_loss(fake, rgb),
                "fft": O.fft_loss(fake, rgb),
                "edge": O.edge_loss(fake, rgb),
                "per": O.feature_l1(feats, real_feats),
                "tv": O.tv_loss(fake),
                "ssim": O.ssim_loss(fake, rgb),
            }
            report = O.total_loss(terms, weights)
        rec = {"disc": loss_d.item(), **report.values()}
        _raise_non_finite(rec)
        gen_tape.backward(report.total)
    finally:
        disc.requires_grad_(True)
    opt_g.step()
    opt_g.zero_grad()
    return rec


def train_on_pairs(cfg: TrainConfig, pairs, out_dir=None, log_path=None) -> TrainResult:
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    gen, disc = build_models(cfg)
    result = TrainResult(cfg, gen, disc)
    dtype = np.float64 if cfg.precision == "float64" else np.float32
    sampler = PatchSampler(pairs, cfg.crop, cfg.stride, seed=cfg.seed, augment=cfg.augment)
    total_iters = cfg.iters or cfg.epochs * sampler.epoch_size
    betas = (cfg.beta1, cfg.beta2)
    opt_g = Adam(gen.parameters(), cfg.lr, betas)
    opt_d = Adam(disc.parameters(), cfg.lr, betas)
    weights = cfg.loss_weights()
    log_file = open(log_path if log_path else out / "train.log", "w") if (log_path or out) else None
    ckpt = out / "checkpoint.ckpt" if out is not None else None
    try:
        with _dtype_scope(cfg):
            stream = iter(sampler)
            for it in range(total_iters):
                epoch = it // sampler.epoch_size
                lr = lr_at(cfg, epoch)
                opt_g.lr = opt_d.lr = lr
                cube_np, rgb_np = next(stream)
                cube = Tensor(cube_np.astype(dtype))
                rgb = Tensor(to_signed(rgb_np).astype(dtype))
                try:
                    rec = train_step(gen, disc, opt_g, opt_d, cube, rgb, weights)
                except NonFiniteError as exc:
                    raise NonFiniteError(f"iteration {it}: {exc}") from exc
                rec = {"iter": it, "epoch": epoch, "lr": lr, **rec}
                result.history.append(rec)
                if log_file:
                    log_file.write(format_record(rec) + "\n")
                    log_file.flush()
                log.debug(format_record(rec))
                epoch_end = (it + 1) % sampler.epoch_size == 0
                if ckpt is not None and cfg.checkpoint_every_epoch and epoch_end:
                    save_checkpoint(ckpt, cfg, generator=gen, discriminator=disc)
        if ckpt is not None:
            save_checkpoint(ckpt, cfg, generator=gen, discriminator=disc)
            result.checkpoint = ckpt
    finally:
        if log_file:
            log_file.close()
    return result


def train(cfg: TrainConfig, data_dir, out_dir) -> TrainResult:
    return train_on_pairs(cfg, load_pairs(data_dir), out_dir)
