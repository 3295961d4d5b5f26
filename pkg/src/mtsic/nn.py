"""Parameter containers and the small layer set the networks are built from."""
from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np

from . import functional as F
from .tensor import Tensor, gelu, get_default_dtype, parameter, relu

__all__ = [
    "Module",
    "ModuleList",
    "Conv2d",
    "TapConv",
    "ConvTranspose2d",
    "Linear",
    "LayerNorm",
    "BatchNorm2d",
    "CBR",
    "DSConv",
    "uniform_init",
]


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return parameter(rng.uniform(-bound, bound, size=shape), dtype=get_default_dtype())


class Module:
    """Attribute-walking container: Tensor attributes are parameters, names
    listed in ``_buffers`` are non-trainable numpy state."""

    _buffers: tuple[str, ...] = ()
    training: bool = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for name, v in vars(self).items():
            if isinstance(v, Module):
                yield name, v

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, v in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(v, Tensor):
                yield full, v
            elif isinstance(v, Module):
                yield from v.named_parameters(full + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self._buffers:
            yield f"{prefix}{name}", getattr(self, name)
        for name, m in self.children():
            yield from m.named_buffers(f"{prefix}{name}.")

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, m in self.children():
            m.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def requires_grad_(self, flag: bool) -> "Module":
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {n: p.data.copy() for n, p in self.named_parameters()}
        state.update({n: b.copy() for n, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        missing = (set(own) | set(bufs)) - set(state)
        unexpected = set(state) - (set(own) | set(bufs))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)[:5]} unexpected={sorted(unexpected)[:5]}")
        for n, p in own.items():
            if state[n].shape != p.shape:
                raise ValueError(f"{n}: shape {state[n].shape} != {p.shape}")
            p.data = np.array(state[n], dtype=p.dtype)
        for n, b in bufs.items():
            b[...] = state[n]

    def astype(self, dtype) -> "Module":
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        return self

    def zero_(self) -> "Module":
        """Set every parameter to zero (buffers untouched)."""
        for p in self.parameters():
            p.data[...] = 0
        return self


class ModuleList(Module):
    def __init__(self, modules: Sequence[Module]):
        for i, m in enumerate(modules):
            setattr(self, str(i), m)
        self._n = len(modules)

    def __len__(self) -> int:
        return self._n

    def __iter__(self):
        return (getattr(self, str(i)) for i in range(self._n))

    def __getitem__(self, i: int) -> Module:
        return getattr(self, str(i % self._n))


class Conv2d(Module):
    def __init__(self, cin, cout, k, rng, stride=1, pad=None, groups=1, bias=True):
        kh, kw = (k, k) if isinstance(k, int) else k
        self.weight = uniform_init(rng, (cout, cin // groups, kh, kw), cin // groups * kh * kw)
        self.bias = uniform_init(rng, (cout,), cin // groups * kh * kw) if bias else None
        self.stride = stride
        self.pad = (kh // 2, kw // 2) if pad is None else pad
        self.groups = groups

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, self.stride, self.pad, 1, self.groups)


class TapConv(Module):
    """Depthwise conv with an explicit tap layout (strip / directional / asymmetric kernels)."""

    def __init__(self, channels: int, offsets, rng, bias: bool = True):
        self.offsets = [tuple(o) for o in offsets]
        n = len(self.offsets)
        self.weight = uniform_init(rng, (channels, n), n)
        self.bias = uniform_init(rng, (channels,), n) if bias else None

    def forward(self, x):
        return F.depthwise_taps(x, self.weight, self.offsets, self.bias)


class ConvTranspose2d(Module):
    def __init__(self, cin, cout, stride, rng):
        self.weight = uniform_init(rng, (cin, cout, stride, stride), cout * stride * stride)
        self.bias = uniform_init(rng, (cout,), cout * stride * stride)

    def forward(self, x):
        return F.conv_transpose2d(x, self.weight, self.bias)


class Linear(Module):
    """y = W x + b on a 1-D feature vector."""

    def __init__(self, nin, nout, rng):
        self.weight = uniform_init(rng, (nout, nin), nin)
        self.bias = uniform_init(rng, (nout,), nin)

    def forward(self, x):
        return (self.weight @ x.reshape(-1, 1)).reshape(-1) + self.bias


class LayerNorm(Module):
    def __init__(self, channels: int):
        self.weight = parameter(np.ones(channels))
        self.bias = parameter(np.zeros(channels))

    def forward(self, x):
        return F.layer_norm(x, self.weight, self.bias)


class BatchNorm2d(Module):
    _buffers = ("running_mean", "running_var")

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.weight = parameter(np.ones(channels))
        self.bias = parameter(np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        return F.batch_norm(
            x, self.weight, self.bias, self.running_mean, self.running_var, self.training, self.momentum, self.eps
        )


class CBR(Module):
    """conv -> batchnorm -> relu. The conv has no bias: batchnorm would cancel it."""

    def __init__(self, cin, cout, rng, k=3):
        self.conv = Conv2d(cin, cout, k, rng, bias=False)
        self.bn = BatchNorm2d(cout)

    def forward(self, x):
        return relu(self.bn(self.conv(x)))


class DSConv(Module):
    """Depthwise then pointwise convolution."""

    def __init__(self, cin, cout, rng, k=1):
        self.depthwise = Conv2d(cin, cin, k, rng, groups=cin)
        self.pointwise = Conv2d(cin, cout, 1, rng)

    def forward(self, x):
        return self.pointwise(self.depthwise(x))


class FFN(Module):
    """1×1 expand -> GELU -> depthwise 3×3 -> 1×1 project."""

    def __init__(self, channels: int, rng, expansion: int = 4):
        hidden = channels * expansion
        self.expand = Conv2d(channels, hidden, 1, rng)
        self.depthwise = Conv2d(hidden, hidden, 3, rng, groups=hidden)
        self.project = Conv2d(hidden, channels, 1, rng)

    def forward(self, x):
        return self.project(self.depthwise(gelu(self.expand(x))))
