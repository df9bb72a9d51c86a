"""Training objectives: content, perceptual, and the combined total loss.

Norms are normalized by element count (means) so the stage coefficients
keep their meaning across resolutions. The image-gradient operator is a
forward difference with a zero last row/column.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .hdec import LayerPair
from .nn import Conv2d, Module
from .rng import SplitMix64
from .tensor import Tensor, absolute, forward_diff, mean_all, silu, square, sub

EXTRACTOR_SEED = 0xFEA7


@dataclass
class LossWeights:
    c0: float  # transmission MSE
    c1: float  # reflection MSE
    c2: float  # transmission gradient L1
    w: float = 0.01  # perceptual weight
    omega_j: float = 0.2  # per-layer perceptual weight

    def __post_init__(self):
        if min(self.c0, self.c1, self.c2, self.w, self.omega_j) < 0:
            raise ValueError("loss weights must be non-negative")


def stage1_weights() -> LossWeights:
    return LossWeights(c0=1.0, c1=0.0, c2=0.0)


def stage2_weights() -> LossWeights:
    return LossWeights(c0=0.3, c1=0.9, c2=0.6)


def image_gradient(x: Tensor) -> tuple[Tensor, Tensor]:
    """(gx, gy) forward differences; last column/row are zero."""
    if x.ndim != 4 or x.shape[2] < 2 or x.shape[3] < 2:
        raise ShapeError(f"image_gradient needs BxCxHxW with H,W >= 2, got {x.shape}")
    return forward_diff(x, 3), forward_diff(x, 2)


def content_loss(t_hat: Tensor, t: Tensor, r_hat: Tensor, r: Tensor, weights: LossWeights) -> Tensor:
    if t_hat.shape != t.shape or r_hat.shape != r.shape:
        raise ShapeError("content_loss: prediction/target shapes differ")
    loss = mean_all(square(sub(t_hat, t))) * weights.c0
    if weights.c1:
        loss = loss + mean_all(square(sub(r_hat, r))) * weights.c1
    if weights.c2:
        gx_h, gy_h = image_gradient(t_hat)
        gx_t, gy_t = image_gradient(t)
        grad_term = (mean_all(absolute(sub(gx_h, gx_t))) + mean_all(absolute(sub(gy_h, gy_t)))) * 0.5
        loss = loss + grad_term * weights.c2
    return loss


class FeatureExtractor(Module):
    """Frozen, seeded 4-stage conv pyramid standing in for pretrained features.

    Weights come from a fixed seed independent of the training seed, never
    receive gradients, and are rebuilt identically in every run.
    """

    TRUNK = (16, 32, 64, 128)

    def __init__(self, dtype=np.float32, seed: int = EXTRACTOR_SEED):
        rng = SplitMix64(seed)
        self.stages = []
        cin = 3
        for i, cout in enumerate(self.TRUNK):
            self.stages.append(Conv2d(f"perc/stage{i}", cin, cout, 3, rng, stride=2, padding=1, dtype=dtype))
            cin = cout
        self.set_trainable(False)

    def features(self, x: Tensor) -> list[Tensor]:
        out = []
        for conv in self.stages:
            x = silu(conv(x))
            out.append(x)
        return out


def perceptual_loss(t_hat: Tensor, t: Tensor, extractor: FeatureExtractor,
                    omega_j: float = 0.2) -> Tensor:
    """Sum over stages of omega_j * mean |phi_j(t_hat) - phi_j(t)|."""
    if t_hat.shape != t.shape:
        raise ShapeError("perceptual_loss: shapes differ")
    loss = None
    for fh, ft in zip(extractor.features(t_hat), extractor.features(t)):
        term = mean_all(absolute(sub(fh, ft))) * omega_j
        loss = term if loss is None else loss + term
    return loss


def total_loss(pairs: list[LayerPair], t: Tensor, r: Tensor, weights: LossWeights,
               extractor: FeatureExtractor) -> Tensor:
    """Equal-weight average of per-column (content + w * perceptual) losses."""
    if not pairs:
        raise ValueError("total_loss: no column outputs")
    acc = None
    for pair in pairs:
        term = content_loss(pair.t_hat, t, pair.r_hat, r, weights)
        if weights.w:
            term = term + perceptual_loss(pair.t_hat, t, extractor, weights.omega_j) * weights.w
        acc = term if acc is None else acc + term
    return acc * (1.0 / len(pairs))
