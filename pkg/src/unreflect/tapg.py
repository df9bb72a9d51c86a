"""Transmission-rate estimation and prompt generation.

A small conv trunk regresses the six per-channel mixing parameters
(alpha_RGB, beta_RGB) from the mixture image; a closed-form least-squares
fit provides exact labels and an independent oracle; a three-layer MLP maps
the six numbers to a per-channel prompt that rescales the column embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFitError, ShapeError
from .nn import Conv2d, Linear, Module
from .rng import SplitMix64
from .tensor import Tensor, linear, mean_hw, mul, reshape, silu

CHANNEL_NAMES = ("R", "G", "B")


@dataclass
class TransmissionRate:
    """Per-channel linear mixing: alpha scales T, beta scales the reflection."""

    alpha: np.ndarray  # (3,)
    beta: np.ndarray  # (3,)

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64).reshape(3)
        self.beta = np.asarray(self.beta, dtype=np.float64).reshape(3)
        if not (np.isfinite(self.alpha).all() and np.isfinite(self.beta).all()):
            raise ValueError("transmission rate contains non-finite values")

    def as_vector(self) -> np.ndarray:
        """Six numbers, alpha_RGB then beta_RGB."""
        return np.concatenate([self.alpha, self.beta])

    @classmethod
    def from_vector(cls, v) -> "TransmissionRate":
        v = np.asarray(v, dtype=np.float64).reshape(6)
        return cls(v[:3], v[3:])


def closed_form_fit(t: np.ndarray | Tensor, mix: np.ndarray | Tensor) -> TransmissionRate:
    """Per-channel ordinary least squares for mix ~ alpha * t + beta.

    Exact minimizer of ||alpha_i t_i + beta_i - mix_i||_2 per channel i,
    computed in float64. Raises DegenerateFitError when a channel of ``t``
    is (near-)constant.
    """
    td = (t.data if isinstance(t, Tensor) else np.asarray(t)).astype(np.float64)
    md = (mix.data if isinstance(mix, Tensor) else np.asarray(mix)).astype(np.float64)
    if td.shape != md.shape:
        raise ShapeError(f"closed_form_fit: shapes differ, {td.shape} vs {md.shape}")
    if td.ndim == 3:
        td, md = td[None], md[None]
    if td.ndim != 4 or td.shape[1] != 3:
        raise ShapeError(f"closed_form_fit: expected Bx3xHxW, got {td.shape}")

    alpha = np.empty(3)
    beta = np.empty(3)
    for c in range(3):
        tc = td[:, c].reshape(-1)
        mc = md[:, c].reshape(-1)
        t_mean = tc.mean()
        var = ((tc - t_mean) ** 2).mean()
        if var <= 1e-8:
            raise DegenerateFitError(
                f"channel {CHANNEL_NAMES[c]}: variance {var:.3e} too small for a stable fit"
            )
        cov = ((tc - t_mean) * (mc - mc.mean())).mean()
        alpha[c] = cov / var
        beta[c] = mc.mean() - alpha[c] * t_mean
    return TransmissionRate(alpha, beta)


class RateEstimator(Module):
    """Strided-conv trunk, global average pool, linear head to six outputs."""

    TRUNK = (16, 32, 64, 128)

    def __init__(self, rng: SplitMix64, dtype=np.float32, name: str = "tapg/estimator"):
        self.stages = []
        cin = 3
        for i, cout in enumerate(self.TRUNK):
            self.stages.append(Conv2d(f"{name}/stage{i}", cin, cout, 3, rng, stride=2, padding=1, dtype=dtype))
            cin = cout
        self.head = Linear(f"{name}/head", cin, 6, rng, dtype=dtype)

    def __call__(self, image: Tensor) -> Tensor:
        """Batched prediction: Bx3xHxW -> Bx6 (alpha_RGB, beta_RGB)."""
        x = image
        for conv in self.stages:
            x = silu(conv(x))
        return self.head(mean_hw(x))


def estimate_rate(image: Tensor, estimator: RateEstimator) -> TransmissionRate:
    """Single-image convenience wrapper around the estimator."""
    if image.ndim != 4 or image.shape[0] != 1:
        raise ShapeError(f"estimate_rate: expected a 1x3xHxW image, got {image.shape}")
    out = estimator(image)
    out.check_finite("estimated rate")
    return TransmissionRate.from_vector(out.data[0])


@dataclass
class Prompt:
    """Per-channel scale vector, broadcast over batch and space."""

    p: Tensor  # (1, C) or (B, C)


class PromptMlp(Module):
    """Three-layer MLP from the six rate numbers to a C-channel prompt."""

    def __init__(self, channels: int, rng: SplitMix64, hidden: int = 64,
                 dtype=np.float32, name: str = "tapg/mlp"):
        self.l0 = Linear(f"{name}/layer0", 6, hidden, rng, dtype=dtype)
        self.l1 = Linear(f"{name}/layer1", hidden, hidden, rng, dtype=dtype)
        self.l2 = Linear(f"{name}/layer2", hidden, channels, rng, dtype=dtype)

    def __call__(self, rate: Tensor) -> Tensor:
        if rate.ndim != 2 or rate.shape[1] != 6:
            raise ShapeError(f"prompt MLP expects Bx6 rates, got {rate.shape}")
        h = silu(self.l0(rate))
        h = silu(self.l1(h))
        return self.l2(h)


def make_prompt(rate: TransmissionRate | Tensor, mlp: PromptMlp) -> Prompt:
    if isinstance(rate, TransmissionRate):
        rate = Tensor(rate.as_vector().reshape(1, 6).astype(mlp.l0.weight.data.dtype))
    return Prompt(mlp(rate))


def modulate(embedding: Tensor, prompt: Prompt | Tensor | None) -> Tensor:
    """Rescale embedding channels by the prompt: out = p o F."""
    if prompt is None:
        return embedding
    p = prompt.p if isinstance(prompt, Prompt) else prompt
    if p.ndim == 1:
        p = reshape(p, (1, p.shape[0]))
    if p.ndim != 2 or p.shape[1] != embedding.shape[1]:
        raise ShapeError(
            f"modulate: prompt channels {p.shape} do not match embedding channels {embedding.shape[1]}"
        )
    if p.shape[0] not in (1, embedding.shape[0]):
        raise ShapeError(f"modulate: prompt batch {p.shape[0]} incompatible with {embedding.shape[0]}")
    return mul(embedding, reshape(p, (p.shape[0], p.shape[1], 1, 1)))


def apply_rate_correction(image: np.ndarray, rate_vec: np.ndarray, alpha_floor: float = 0.05) -> np.ndarray:
    """Undo the estimated linear mix: (I - beta) / alpha per channel.

    alpha is floored away from zero so an untrained estimator cannot blow
    the input up.
    """
    v = np.asarray(rate_vec, dtype=np.float64).reshape(6)
    alpha = np.sign(v[:3]) * np.maximum(np.abs(v[:3]), alpha_floor)
    alpha = np.where(alpha == 0, alpha_floor, alpha)
    beta = v[3:]
    out = (image.astype(np.float64) - beta[:, None, None]) / alpha[:, None, None]
    return out.astype(image.dtype)
