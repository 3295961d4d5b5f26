"""Held-out evaluation and single-cube colorization."""
from __future__ import annotations

import numpy as np

from .checkpoint import load_checkpoint
from .data import load_pairs, read_cube, to_unit, write_png
from .generator import MTSIC
from .metrics import MetricReport, image_metrics
from .tensor import ShapeError, Tensor

__all__ = ["load_generator", "colorize_array", "evaluate_model", "evaluate", "colorize"]


def load_generator(path) -> MTSIC:
    ckpt = load_checkpoint(path)
    gen = MTSIC(ckpt.cfg.generator(), 0)
    gen.load_state_dict(ckpt.section("generator"))
    return gen.eval()


def _crop8(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[1:]
    return x[:, : h - h % 8, : w - w % 8]


def colorize_array(gen: MTSIC, cube: np.ndarray) -> np.ndarray:
    """[0,1] RGB for a cube; extents are cropped to multiples of 8."""
    cube = _crop8(np.asarray(cube))
    if cube.shape[1] == 0 or cube.shape[2] == 0:
        raise ShapeError(f"cube {cube.shape} too small")
    dtype = gen.head.weight.dtype
    out = gen(Tensor(cube.astype(dtype)))
    return to_unit(out.data.astype(np.float64))


def evaluate_model(gen: MTSIC, pairs) -> MetricReport:
    was_training = gen.training
    gen.eval()
    report = MetricReport()
    try:
        for name, cube, rgb in pairs:
            pred = colorize_array(gen, cube)
            report.add(name, image_metrics(pred, _crop8(rgb)))
    finally:
        gen.train(was_training)
    return report


def evaluate(checkpoint, data_dir, report_path=None) -> MetricReport:
    report = evaluate_model(load_generator(checkpoint), load_pairs(data_dir))
    if report_path is not None:
        with open(report_path, "w") as f:
            f.write(report.to_text())
    return report


def colorize(checkpoint, cube_path, png_path) -> np.ndarray:
    rgb = colorize_array(load_generator(checkpoint), read_cube(cube_path))
    write_png(png_path, rgb)
    return rgb
