"""Evaluation metrics: PSNR and SSIM over [0, 1] images, plus CSV output."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .errors import ShapeError
from .tensor import Tensor

PSNR_CAP = 99.0

_GRAY = np.array([0.299, 0.587, 0.114], dtype=np.float64)


def _as_array(x) -> np.ndarray:
    a = (x.data if isinstance(x, Tensor) else np.asarray(x)).astype(np.float64)
    if a.ndim == 3:
        a = a[None]
    if a.ndim != 4:
        raise ShapeError(f"metrics expect (B)xCxHxW images, got shape {a.shape}")
    return a


def psnr(a, b) -> float:
    """10 * log10(1 / MSE) after clamping to [0, 1]; capped at 99 dB."""
    ad, bd = _as_array(a), _as_array(b)
    if ad.shape != bd.shape:
        raise ShapeError(f"psnr: shapes differ, {ad.shape} vs {bd.shape}")
    mse = float(np.mean((np.clip(ad, 0, 1) - np.clip(bd, 0, 1)) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def _to_gray(img: np.ndarray) -> np.ndarray:
    if img.shape[1] == 3:
        return np.einsum("bchw,c->bhw", img, _GRAY)
    if img.shape[1] == 1:
        return img[:, 0]
    raise ShapeError(f"ssim expects 1 or 3 channels, got {img.shape[1]}")


def _window_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(img, kernel.shape, axis=(1, 2))
    return np.tensordot(win, kernel, axes=([3, 4], [0, 1]))


def ssim(a, b, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean local SSIM on the luma channel, Gaussian 11x11 window, L = 1."""
    ad, bd = _as_array(a), _as_array(b)
    if ad.shape != bd.shape:
        raise ShapeError(f"ssim: shapes differ, {ad.shape} vs {bd.shape}")
    if ad.shape[2] < window or ad.shape[3] < window:
        raise ShapeError(f"ssim: image {ad.shape[2]}x{ad.shape[3]} smaller than {window}x{window} window")
    x = _to_gray(np.clip(ad, 0, 1))
    y = _to_gray(np.clip(bd, 0, 1))
    kern = _gaussian_window(window, sigma)

    mu_x = _window_mean(x, kern)
    mu_y = _window_mean(y, kern)
    xx = _window_mean(x * x, kern) - mu_x**2
    yy = _window_mean(y * y, kern) - mu_y**2
    xy = _window_mean(x * y, kern) - mu_x * mu_y

    c1 = k1 * k1
    c2 = k2 * k2
    num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


def write_metrics_csv(path, rows: list[tuple[str, float, float]]) -> None:
    """Per-sample rows plus a trailing mean row; schema: sample_id,psnr,ssim."""
    lines = ["sample_id,psnr,ssim"]
    for sample_id, p, s in rows:
        lines.append(f"{sample_id},{p:.6f},{s:.6f}")
    if rows:
        mp = sum(r[1] for r in rows) / len(rows)
        ms = sum(r[2] for r in rows) / len(rows)
        lines.append(f"mean,{mp:.6f},{ms:.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
