"""Hierarchy decoder: pyramid -> full-resolution layer residuals.

Level decoders walk the pyramid top-down. Each one lifts the coarser
feature with a 1x1 conv + pixel shuffle and fuses it with the finer pyramid
feature through multiplicative modulation (lower * sigmoid(up) + up). A
final 1x1 conv + pixel shuffle emits six channels that split into the
transmission and reflection residuals; the layers themselves are the input
plus its residual. Clamping only happens at metric/export time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .mcre import McreConfig, PyramidState
from .nn import Conv2d, Module
from .rng import SplitMix64
from .tensor import Tensor, add, mul, pixel_shuffle, sigmoid, slice_channels


@dataclass
class LayerPair:
    """A decomposition (T_hat, R_hat) plus the residuals that produced it."""

    t_hat: Tensor
    r_hat: Tensor
    t_res: Tensor
    r_res: Tensor


class LevelDecoder(Module):
    """Fuse a coarser decoded feature into the next finer pyramid level."""

    def __init__(self, name: str, upper_channels: int, rng: SplitMix64, dtype=np.float32):
        # 1x1 conv to 2x channels, then shuffle: upper_channels -> upper_channels // 2
        self.up = Conv2d(name, upper_channels, 2 * upper_channels, 1, rng, dtype=dtype)

    def __call__(self, upper: Tensor, lower: Tensor) -> Tensor:
        if upper.shape[1] != 2 * lower.shape[1]:
            raise ShapeError(
                f"level decoder: upper channels {upper.shape[1]} must be twice lower channels {lower.shape[1]}"
            )
        up = pixel_shuffle(self.up(upper), 2)
        if up.shape != lower.shape:
            raise ShapeError(f"level decoder: upsampled shape {up.shape} != lower shape {lower.shape}")
        return add(mul(lower, sigmoid(up)), up)


class HierarchyDecoder(Module):
    """Per-column decoder; independent parameters per column."""

    def __init__(self, cfg: McreConfig, col: int, rng: SplitMix64, dtype=np.float32):
        self.cfg = cfg
        name = f"hdec/col{col}"
        self.levels = [
            LevelDecoder(f"{name}/ld{j}", cfg.channels(j + 1), rng, dtype)
            for j in reversed(range(cfg.num_levels - 1))
        ]
        # 4 * 6 channels collapse to 6 full-resolution channels after shuffle
        self.head = Conv2d(f"{name}/head", cfg.base_channels, 4 * 6, 1, rng, dtype=dtype)

    def decode(self, pyramid: PyramidState, image: Tensor) -> LayerPair:
        feats = pyramid.features
        if len(feats) != self.cfg.num_levels:
            raise ShapeError(f"decoder got {len(feats)} levels, expected {self.cfg.num_levels}")
        x = feats[-1]
        for ld, j in zip(self.levels, reversed(range(self.cfg.num_levels - 1))):
            x = ld(x, feats[j])
        res = pixel_shuffle(self.head(x), 2)
        if res.shape[2:] != image.shape[2:]:
            raise ShapeError(f"decoded residual {res.shape} does not match image {image.shape}")
        t_res = slice_channels(res, 0, 3)
        r_res = slice_channels(res, 3, 6)
        return LayerPair(add(image, t_res), add(image, r_res), t_res, r_res)
