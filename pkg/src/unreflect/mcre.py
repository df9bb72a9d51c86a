"""Multi-column reversible encoder.

Columns share one stride-2 embedding of the input; column 1 additionally
consumes a pyramid from a small trainable hierarchy ladder, and each later
column consumes its predecessor's pyramid. Within a level the connection is

    F_j^i = omega(theta(F_{j-1}^i) + delta(F_{j+1}^{i-1})) + gamma * F_j^{i-1}

which is exactly invertible: the previous column's feature is recovered by
subtracting the fused term and dividing by the channel scale. The top level
drops the delta term. Level 0 feeds on the (prompt-modulated) embedding,
which already sits at level-0 shape, so its theta keeps stride 1 and channel
count; every other theta halves space and doubles channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .nn import ChannelScale, Conv2d, Module
from .rng import SplitMix64
from .tapg import Prompt, modulate
from .tensor import Tensor, add, mul, no_grad, pixel_shuffle, reshape, silu, sub


@dataclass
class McreConfig:
    num_columns: int = 4
    num_levels: int = 4
    base_channels: int = 64
    channel_multiplier: int = 2
    gamma_min: float = 1e-3

    def __post_init__(self):
        if self.num_columns < 1:
            raise ValueError(f"num_columns must be >= 1, got {self.num_columns}")
        if self.num_levels < 2:
            raise ValueError(f"num_levels must be >= 2, got {self.num_levels}")
        if self.base_channels % 4:
            raise ValueError(f"base_channels must be divisible by 4, got {self.base_channels}")
        if self.gamma_min <= 0:
            raise ValueError("gamma_min must be positive")

    def channels(self, level: int) -> int:
        return self.base_channels * self.channel_multiplier**level

    def divisor(self) -> int:
        return 2**self.num_levels

    def level_shape(self, level: int, batch: int, h: int, w: int) -> tuple[int, int, int, int]:
        """Feature shape at a level for an input image of h x w."""
        s = 2 ** (level + 1)
        return (batch, self.channels(level), h // s, w // s)


@dataclass
class PyramidState:
    """Per-column level features, channels doubling and space halving."""

    features: list[Tensor] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.features)

    def __getitem__(self, j: int) -> Tensor:
        return self.features[j]

    def shapes(self) -> list[tuple[int, ...]]:
        return [f.shape for f in self.features]

    def check_schedule(self, cfg: McreConfig, image_shape) -> None:
        b, _, h, w = image_shape
        for j, f in enumerate(self.features):
            want = cfg.level_shape(j, b, h, w)
            if f.shape != want:
                raise ShapeError(f"level {j}: shape {f.shape} violates schedule {want}")
            f.check_finite(f"level {j}")


@dataclass
class EmbedOut:
    """The shared embedding (one per input, consumed by every column)."""

    f_minus1: Tensor


class ColumnEmbed(Module):
    """7x7 stride-2 convolution producing overlapping 2x2 patches."""

    def __init__(self, cfg: McreConfig, rng: SplitMix64, dtype=np.float32):
        self.cfg = cfg
        self.conv = Conv2d("mcre/embed", 3, cfg.base_channels, 7, rng, stride=2, padding=3, dtype=dtype)

    def __call__(self, image: Tensor) -> EmbedOut:
        check_image(image, self.cfg)
        return EmbedOut(self.conv(image))


def check_image(image: Tensor, cfg: McreConfig) -> None:
    if image.ndim != 4 or image.shape[1] != 3:
        raise ShapeError(f"expected a Bx3xHxW image, got {image.shape}")
    d = cfg.divisor()
    _, _, h, w = image.shape
    if h % d or w % d:
        raise ShapeError(f"image spatial dims {h}x{w} must be divisible by {d}")


class HierarchyLadder(Module):
    """Trainable stand-in for a pretrained hierarchy extractor.

    One 3x3 stride-2 conv + activation per level, channels doubling; feeds
    column 1 only.
    """

    def __init__(self, cfg: McreConfig, rng: SplitMix64, dtype=np.float32):
        self.cfg = cfg
        self.stages = []
        cin = 3
        for j in range(cfg.num_levels):
            self.stages.append(
                Conv2d(f"mcre/phe/stage{j}", cin, cfg.channels(j), 3, rng, stride=2, padding=1, dtype=dtype)
            )
            cin = cfg.channels(j)

    def __call__(self, image: Tensor) -> PyramidState:
        check_image(image, self.cfg)
        feats = []
        x = image
        for conv in self.stages:
            x = silu(conv(x))
            feats.append(x)
        return PyramidState(feats)


class LevelBlock(Module):
    """Parameters and math of one (column, level) reversible connection."""

    def __init__(self, cfg: McreConfig, col: int, level: int, rng: SplitMix64, dtype=np.float32):
        c = cfg.channels(level)
        name = f"mcre/col{col}/level{level}"
        self.level = level
        self.end_level = level == cfg.num_levels - 1
        if level == 0:
            self.theta = Conv2d(f"{name}/theta", c, c, 3, rng, stride=1, padding=1, dtype=dtype)
        else:
            self.theta = Conv2d(f"{name}/theta", cfg.channels(level - 1), c, 3, rng, stride=2, padding=1, dtype=dtype)
        if not self.end_level:
            self.delta = Conv2d(f"{name}/delta", cfg.channels(level + 1), 4 * c, 1, rng, dtype=dtype)
        self.omega1 = Conv2d(f"{name}/omega1", c, c, 3, rng, padding=1, dtype=dtype)
        self.omega2 = Conv2d(f"{name}/omega2", c, c, 3, rng, padding=1, dtype=dtype)
        self.gamma = ChannelScale(f"{name}/gamma", c, floor=cfg.gamma_min, dtype=dtype)

    def fuse(self, below: Tensor, above: Tensor | None) -> Tensor:
        """omega(theta(below) + delta(above)); the trainable half of the update."""
        if self.end_level != (above is None):
            raise ShapeError(
                f"level {self.level}: upper input must be {'absent' if self.end_level else 'present'}"
            )
        t = self.theta(below)
        if above is not None:
            t = add(t, pixel_shuffle(self.delta(above), 2))
        return self.omega2(silu(self.omega1(t)))

    def forward(self, prev_col: Tensor, below: Tensor, above: Tensor | None) -> Tensor:
        if prev_col.shape[1] != self.gamma.scale.shape[0]:
            raise ShapeError(
                f"level {self.level}: carry channels {prev_col.shape[1]} != {self.gamma.scale.shape[0]}"
            )
        return add(self.fuse(below, above), self.gamma(prev_col))

    def reverse(self, out: Tensor, below: Tensor, above: Tensor | None) -> Tensor:
        """Recover the previous column's feature from this level's output."""
        with no_grad():
            inv = Tensor(self.gamma.inverse_data())
            diff = sub(out, self.fuse(below, above))
            return mul(diff, reshape(inv, (1, inv.shape[0], 1, 1)))


class Column(Module):
    def __init__(self, cfg: McreConfig, col: int, rng: SplitMix64, dtype=np.float32):
        self.blocks = [LevelBlock(cfg, col, j, rng, dtype) for j in range(cfg.num_levels)]


class Mcre(Module):
    """Embedding + hierarchy ladder + N reversible columns."""

    def __init__(self, cfg: McreConfig, rng: SplitMix64, dtype=np.float32):
        self.cfg = cfg
        self.embed = ColumnEmbed(cfg, rng, dtype)
        self.phe = HierarchyLadder(cfg, rng, dtype)
        self.columns = [Column(cfg, i, rng, dtype) for i in range(1, cfg.num_columns + 1)]

    def modulated_embedding(self, image: Tensor, prompt: Prompt | Tensor | None) -> Tensor:
        return modulate(self.embed(image).f_minus1, prompt)

    def column_forward(self, col_index: int, emb: Tensor, prev: list[Tensor]) -> list[Tensor]:
        """Run one column (1-based index) over the previous column's levels."""
        blocks = self.columns[col_index - 1].blocks
        L = len(blocks)
        cur: list[Tensor] = []
        below = emb
        for j, block in enumerate(blocks):
            above = prev[j + 1] if j + 1 < L else None
            f = block.forward(prev[j], below, above)
            cur.append(f)
            below = f
        return cur

    def encode(self, image: Tensor, prompt: Prompt | Tensor | None = None) -> list[PyramidState]:
        """All column pyramids, in column order (last is the output column)."""
        check_image(image, self.cfg)
        emb = self.modulated_embedding(image, prompt)
        prev = self.phe(image).features
        pyramids = []
        for i in range(1, self.cfg.num_columns + 1):
            cur = self.column_forward(i, emb, prev)
            pyramids.append(PyramidState(cur))
            prev = cur
        return pyramids

    def reconstruct_previous(self, col_index: int, pyramid: PyramidState | list[Tensor],
                             emb: Tensor) -> PyramidState:
        """Invert column ``col_index`` (1-based): rebuild its input pyramid.

        Levels are recovered top-down; the end level needs no upper input,
        and each lower level reuses the upper feature just recovered.
        """
        feats = pyramid.features if isinstance(pyramid, PyramidState) else list(pyramid)
        blocks = self.columns[col_index - 1].blocks
        L = len(blocks)
        rec: list[Tensor | None] = [None] * L
        with no_grad():
            for j in reversed(range(L)):
                below = feats[j - 1] if j > 0 else emb
                above = rec[j + 1] if j + 1 < L else None
                rec[j] = blocks[j].reverse(feats[j], below, above)
        return PyramidState(rec)  # type: ignore[arg-type]

    def project_scales(self) -> None:
        for col in self.columns:
            for block in col.blocks:
                block.gamma.project()
