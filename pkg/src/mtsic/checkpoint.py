"""Flat named-tensor checkpoint container.

Layout (little-endian)::

    b"MTCK" | u8 version | u16 len + config hash (ascii) | u32 len + config text (utf-8)
    u32 entry count, then per entry:
        u16 len + name (utf-8) | u8 ndim | ndim × u32 extents | float32 payload
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .config import TrainConfig, parse_config
from .data import FormatError, TruncationError

__all__ = ["save_checkpoint", "load_checkpoint", "write_container", "read_container", "Checkpoint"]

MAGIC = b"MTCK"
VERSION = 1


def write_container(path, tensors: dict[str, np.ndarray], config_hash: str, config_text: str = "") -> None:
    parts = [MAGIC, struct.pack("<B", VERSION)]
    h = config_hash.encode("ascii")
    c = config_text.encode("utf-8")
    parts += [struct.pack("<H", len(h)), h, struct.pack("<I", len(c)), c, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        n = name.encode("utf-8")
        parts += [struct.pack("<H", len(n)), n, struct.pack("<B", arr.ndim), struct.pack(f"<{arr.ndim}I", *arr.shape)]
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise TruncationError(f"{self.path}: unexpected end of checkpoint")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_container(path) -> tuple[dict[str, np.ndarray], str, str]:
    """Return (tensors, config hash, config text)."""
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4) != MAGIC:
        raise FormatError(f"{path}: not a checkpoint")
    (version,) = r.unpack("<B")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    (hl,) = r.unpack("<H")
    config_hash = r.take(hl).decode("ascii")
    (cl,) = r.unpack("<I")
    config_text = r.take(cl).decode("utf-8")
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (nl,) = r.unpack("<H")
        name = r.take(nl).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        n = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(r.raw):
        raise FormatError(f"{path}: {len(r.raw) - r.pos} trailing bytes")
    return tensors, config_hash, config_text


class Checkpoint:
    def __init__(self, cfg: TrainConfig, tensors: dict[str, np.ndarray]):
        self.cfg = cfg
        self.tensors = tensors

    def section(self, prefix: str) -> dict[str, np.ndarray]:
        p = prefix + "."
        return {k[len(p) :]: v for k, v in self.tensors.items() if k.startswith(p)}


def save_checkpoint(path, cfg: TrainConfig, **modules) -> None:
    """Save each module's parameters and buffers under ``<keyword>.<name>``."""
    tensors = {}
    for prefix, module in modules.items():
        for name, arr in module.state_dict().items():
            tensors[f"{prefix}.{name}"] = arr
    write_container(path, tensors, cfg.hash(), cfg.to_text())


def load_checkpoint(path) -> Checkpoint:
    tensors, config_hash, config_text = read_container(path)
    cfg = parse_config(config_text)
    if cfg.hash() != config_hash:
        raise FormatError(f"{path}: config hash {config_hash} does not match its embedded config ({cfg.hash()})")
    return Checkpoint(cfg, tensors)
