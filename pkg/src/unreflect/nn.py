"""Layer building blocks on top of the tensor engine.

Parameters are created with their full checkpoint names at construction,
drawn uniformly in +-1/sqrt(fan_in) from a shared SplitMix64 stream so a
fixed seed pins every weight.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import InvertibilityError
from .rng import SplitMix64
from .tensor import Parameter, Tensor, conv2d, linear, mul, reshape


class Module:
    """Minimal container; children and parameters are found by attribute walk."""

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        seen: set[int] = set()
        self._collect(out, seen)
        return out

    def _collect(self, out: list[Parameter], seen: set[int]) -> None:
        for value in self.__dict__.values():
            for item in value if isinstance(value, (list, tuple)) else (value,):
                if isinstance(item, Parameter) and id(item) not in seen:
                    seen.add(id(item))
                    out.append(item)
                elif isinstance(item, Module):
                    item._collect(out, seen)

    def named_parameters(self) -> dict[str, Parameter]:
        out: dict[str, Parameter] = {}
        for p in self.parameters():
            if p.name in out:
                raise ValueError(f"duplicate parameter name {p.name!r}")
            out[p.name] = p
        return out

    def zero_grads(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters():
            p.tensor.requires_grad = flag


def _uniform_init(rng: SplitMix64, fan_in: int, shape, dtype) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape).astype(dtype)


class Conv2d(Module):
    def __init__(self, name: str, cin: int, cout: int, k: int, rng: SplitMix64,
                 stride: int = 1, padding: int = 0, dtype=np.float32):
        fan_in = cin * k * k
        self.weight = Parameter(f"{name}/weight", _uniform_init(rng, fan_in, (cout, cin, k, k), dtype))
        self.bias = Parameter(f"{name}/bias", _uniform_init(rng, fan_in, (cout,), dtype))
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight.tensor, self.bias.tensor, self.stride, self.padding)


class Linear(Module):
    def __init__(self, name: str, fin: int, fout: int, rng: SplitMix64, dtype=np.float32):
        self.weight = Parameter(f"{name}/weight", _uniform_init(rng, fin, (fin, fout), dtype))
        self.bias = Parameter(f"{name}/bias", _uniform_init(rng, fin, (fout,), dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight.tensor, self.bias.tensor)


class ChannelScale(Module):
    """Learnable per-channel multiplier with a magnitude floor.

    Initialized at 1 so a fresh block passes signal through unchanged; the
    floor keeps the inverse well conditioned and is re-imposed by
    ``project`` after every optimizer step.
    """

    def __init__(self, name: str, channels: int, floor: float = 1e-3, dtype=np.float32):
        self.scale = Parameter(f"{name}/scale", np.ones(channels, dtype=dtype))
        self.floor = floor

    def __call__(self, x: Tensor) -> Tensor:
        c = self.scale.shape[0]
        return mul(x, reshape(self.scale.tensor, (1, c, 1, 1)))

    def project(self) -> None:
        d = self.scale.data
        small = np.abs(d) < self.floor
        if small.any():
            d[small] = np.copysign(self.floor, np.where(d[small] == 0, 1.0, d[small])).astype(d.dtype)

    def inverse_data(self) -> np.ndarray:
        """Reciprocal scale for the reverse pass; raises below the floor."""
        d = self.scale.data
        if (np.abs(d) < self.floor).any():
            bad = int(np.argmin(np.abs(d)))
            raise InvertibilityError(
                f"{self.scale.name}: |scale[{bad}]| = {abs(float(d[bad])):.3e} below floor {self.floor:g}"
            )
        return (1.0 / d).astype(d.dtype)
