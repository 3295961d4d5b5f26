"""Synthetic multiband scenes, cube / PNG file IO, and the training patch sampler."""
from __future__ import annotations

import colorsys
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

from .functional import _interp_matrix

__all__ = [
    "FormatError",
    "TruncationError",
    "MaterialSignature",
    "ShapeSpec",
    "SceneSpec",
    "palette",
    "synth_scene",
    "write_cube",
    "read_cube",
    "write_png",
    "read_png",
    "generate_dataset",
    "load_pairs",
    "patch_grid",
    "augment_pair",
    "PatchSampler",
    "to_signed",
    "to_unit",
]

CUBE_MAGIC = b"SICB"
CUBE_VERSION = 1
_HEADER = struct.Struct("<4sBIII")


class FormatError(ValueError):
    """File does not start with a recognised header."""


class TruncationError(FormatError):
    """Header extents disagree with the payload length."""


def to_signed(x: np.ndarray) -> np.ndarray:
    """[0,1] -> [-1,1]."""
    return x * 2.0 - 1.0


def to_unit(x: np.ndarray) -> np.ndarray:
    """[-1,1] -> [0,1], clipped."""
    return np.clip((x + 1.0) * 0.5, 0.0, 1.0)


# --------------------------------------------------------------------------- materials and scenes


@dataclass(frozen=True)
class MaterialSignature:
    center: float  # band index of the spectral peak
    width: float
    amplitude: float
    color: tuple[float, float, float]

    def spectrum(self, bands: int) -> np.ndarray:
        b = np.arange(bands, dtype=np.float64)
        return self.amplitude * np.exp(-0.5 * ((b - self.center) / self.width) ** 2)


def palette(bands: int, n_materials: int = 6) -> list[MaterialSignature]:
    """Materials with distinct peak bands; hue follows the peak position so the
    band -> colour map is injective."""
    centers = np.linspace(0.0, bands - 1.0, n_materials)
    width = max(bands / (2.0 * n_materials), 0.5)
    out = []
    for i, c in enumerate(centers):
        hue = 0.85 * c / bands
        color = colorsys.hsv_to_rgb(hue, 0.75, 0.95)
        out.append(MaterialSignature(float(c), width, 0.6 + 0.4 * (i % 2), tuple(float(v) for v in color)))
    return out


@dataclass(frozen=True)
class ShapeSpec:
    kind: str  # "rect" or "ellipse"
    cy: float
    cx: float
    ry: float
    rx: float
    material: int
    gain: float
    slope_y: float
    slope_x: float

    def mask(self, h: int, w: int) -> np.ndarray:
        y, x = np.mgrid[0:h, 0:w]
        dy, dx = (y - self.cy) / self.ry, (x - self.cx) / self.rx
        if self.kind == "rect":
            return (np.abs(dy) <= 1) & (np.abs(dx) <= 1)
        return dy * dy + dx * dx <= 1

    def intensity(self, h: int, w: int) -> np.ndarray:
        y, x = np.mgrid[0:h, 0:w]
        field_ = self.gain * (1 + self.slope_y * (y - self.cy) / h + self.slope_x * (x - self.cx) / w)
        return np.clip(field_, 0.1, 1.0)


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    height: int = 64
    width: int = 64
    bands: int = 8
    noise: float = 0.01
    n_materials: int = 6
    shapes: tuple[ShapeSpec, ...] = field(default=())

    @classmethod
    def random(cls, seed: int, height: int = 64, width: int = 64, bands: int = 8, noise: float = 0.01,
               n_materials: int = 6) -> "SceneSpec":
        rng = np.random.default_rng(seed)
        k = int(rng.integers(3, 9))
        shapes = []
        for _ in range(k):
            shapes.append(
                ShapeSpec(
                    kind=str(rng.choice(["rect", "ellipse"])),
                    cy=float(rng.uniform(0, height)),
                    cx=float(rng.uniform(0, width)),
                    ry=float(rng.uniform(0.08, 0.3) * height),
                    rx=float(rng.uniform(0.08, 0.3) * width),
                    material=int(rng.integers(1, n_materials)),
                    gain=float(rng.uniform(0.6, 1.0)),
                    slope_y=float(rng.uniform(-0.5, 0.5)),
                    slope_x=float(rng.uniform(-0.5, 0.5)),
                )
            )
        return cls(seed, height, width, bands, noise, n_materials, tuple(shapes))


def synth_scene(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    """Render (cube L×H×W float32, rgb 3×H×W float32 in [0,1]).

    Painter's order: later shapes cover earlier ones; material 0 is the background.
    """
    h, w, L = spec.height, spec.width, spec.bands
    mats = palette(L, spec.n_materials)
    spectra = np.stack([m.spectrum(L) for m in mats])
    colors = np.array([m.color for m in mats])
    material = np.zeros((h, w), dtype=np.int64)
    y, x = np.mgrid[0:h, 0:w]
    intensity = 0.5 + 0.2 * np.sin(2 * np.pi * (y / h + 0.5 * x / w))
    for s in spec.shapes:
        m = s.mask(h, w)
        material[m] = s.material
        intensity = np.where(m, s.intensity(h, w), intensity)
    cube = spectra[material].transpose(2, 0, 1) * intensity
    rgb = colors[material].transpose(2, 0, 1) * intensity
    if spec.noise > 0:
        noise_rng = np.random.default_rng([spec.seed, 1])
        cube = cube + noise_rng.normal(0.0, spec.noise, cube.shape)
    return cube.astype(np.float32), np.clip(rgb, 0, 1).astype(np.float32)


# --------------------------------------------------------------------------- file IO


def write_cube(path, cube: np.ndarray) -> None:
    cube = np.asarray(cube)
    if cube.ndim != 3:
        raise ValueError(f"cube must be L×H×W, got {cube.shape}")
    L, h, w = cube.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(CUBE_MAGIC, CUBE_VERSION, L, h, w))
        f.write(np.ascontiguousarray(cube, dtype="<f4").tobytes())


def read_cube(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: too short for a cube header")
    magic, version, L, h, w = _HEADER.unpack_from(raw)
    if magic != CUBE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != CUBE_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    payload = len(raw) - _HEADER.size
    if payload != 4 * L * h * w:
        raise TruncationError(f"{path}: header says {L}×{h}×{w} ({4 * L * h * w} bytes), payload has {payload}")
    return np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(L, h, w).astype(np.float32)


def write_png(path, rgb: np.ndarray) -> None:
    """Write a [0,1] 3×H×W image as 8-bit RGB."""
    arr = np.clip(np.rint(np.asarray(rgb, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path)


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1).copy()


def generate_dataset(out_dir, seed: int, count: int, bands: int = 8, size: int = 64, noise: float = 0.01) -> list[str]:
    """Write ``count`` scenes as scene_XXXX.sicb / scene_XXXX.png; scene i uses seed (seed, i)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i in range(count):
        scene_seed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        cube, rgb = synth_scene(SceneSpec.random(scene_seed, size, size, bands, noise))
        name = f"scene_{i:04d}"
        write_cube(out / f"{name}.sicb", cube)
        write_png(out / f"{name}.png", rgb)
        names.append(name)
    return names


def load_pairs(data_dir) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """(name, cube, rgb in [0,1]) for every cube with a matching PNG, sorted by name."""
    d = Path(data_dir)
    pairs = []
    for cube_path in sorted(d.glob("*.sicb")):
        png = cube_path.with_suffix(".png")
        if not png.exists():
            raise FileNotFoundError(f"no target image for {cube_path.name}")
        cube, rgb = read_cube(cube_path), read_png(png)
        if cube.shape[1:] != rgb.shape[1:]:
            raise ValueError(f"{cube_path.stem}: cube {cube.shape} and image {rgb.shape} extents differ")
        pairs.append((cube_path.stem, cube, rgb))
    if not pairs:
        raise FileNotFoundError(f"no .sicb cubes in {d}")
    return pairs


# --------------------------------------------------------------------------- patches


def patch_grid(h: int, w: int, crop: int, stride: int) -> list[tuple[int, int]]:
    """Top-left corners of overlapping crops: floor((extent - crop)/stride) + 1 per axis."""
    if crop > h or crop > w:
        raise ValueError(f"crop {crop} larger than image {h}×{w}")
    if stride < 1:
        raise ValueError("stride must be positive")
    return [(y, x) for y in range(0, h - crop + 1, stride) for x in range(0, w - crop + 1, stride)]


def _resample(x: np.ndarray, size: int) -> np.ndarray:
    ry = _interp_matrix(x.shape[1], size, "bilinear")
    rx = _interp_matrix(x.shape[2], size, "bilinear")
    return (np.matmul(ry, x) @ rx.T).astype(x.dtype)


def augment_pair(cube: np.ndarray, rgb: np.ndarray, y: int, x: int, crop: int, rng: np.random.Generator,
                 jitter: int, scale_range: tuple[float, float] = (0.8, 1.2)) -> tuple[np.ndarray, np.ndarray]:
    """Jittered, rescaled and rotated crop; one transform drawn and applied to both arrays."""
    h, w = cube.shape[1:]
    scale = rng.uniform(*scale_range)
    src = int(min(round(crop / scale), h, w))
    cy = y + crop // 2 + int(rng.integers(-jitter, jitter + 1))
    cx = x + crop // 2 + int(rng.integers(-jitter, jitter + 1))
    y0 = int(np.clip(cy - src // 2, 0, h - src))
    x0 = int(np.clip(cx - src // 2, 0, w - src))
    k = int(rng.integers(4))
    out = []
    for arr in (cube, rgb):
        patch = arr[:, y0 : y0 + src, x0 : x0 + src]
        if src != crop:
            patch = _resample(patch, crop)
        out.append(np.ascontiguousarray(np.rot90(patch, k, axes=(1, 2))))
    return out[0], out[1]


class PatchSampler:
    """Endless stream of (cube, rgb) training crops.

    Each epoch visits every grid position of every scene once, in a seeded
    shuffled order.
    """

    def __init__(self, pairs, crop: int, stride: int, seed: int = 0, augment: bool = True):
        self.pairs = [(c, r) for _, c, r in pairs]
        self.crop = crop
        self.stride = stride
        self.augment = augment
        self.rng = np.random.default_rng(seed)
        self.positions = [
            (i, y, x) for i, (c, _) in enumerate(self.pairs) for y, x in patch_grid(c.shape[1], c.shape[2], crop, stride)
        ]

    @property
    def epoch_size(self) -> int:
        return len(self.positions)

    def __iter__(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        while True:
            for j in self.rng.permutation(len(self.positions)):
                i, y, x = self.positions[j]
                cube, rgb = self.pairs[i]
                if self.augment:
                    yield augment_pair(cube, rgb, y, x, self.crop, self.rng, self.stride // 2)
                else:
                    c = self.crop
                    yield cube[:, y : y + c, x : x + c].copy(), rgb[:, y : y + c, x : x + c].copy()
