"""Physical reflection synthesis: (mixture, transmission, reflection) tuples.

The mixture follows I = alpha o T + beta o R - T o R with per-channel alpha
and beta, the reflection Gaussian-blurred before mixing, and the result
clipped to [0, 1]. Sources are procedurally generated multi-frequency
textures by default so the pipeline needs no external corpus; a directory
of PNG/PPM images can be used instead.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .container import write_container
from .errors import ShapeError, UnreflectError
from .imageio import SUPPORTED, read_image
from .rng import SplitMix64
from .tapg import TransmissionRate

ALPHA_RANGE = (0.8, 1.0)
BETA_RANGE = (0.2, 1.0)
BLUR_SIGMA_RANGE = (0.0, 3.0)


@dataclass
class SynthSample:
    """One training tuple; ``refl`` is the blurred layer actually mixed in."""

    mix: np.ndarray  # I, 3xHxW in [0, 1]
    trans: np.ndarray  # T
    refl: np.ndarray  # R (post-blur)
    rate: TransmissionRate


def sample_rate(rng: SplitMix64) -> TransmissionRate:
    """Independent per-channel draws: alpha in [0.8, 1], beta in [0.2, 1]."""
    alpha = rng.uniform(*ALPHA_RANGE, (3,))
    beta = rng.uniform(*BETA_RANGE, (3,))
    return TransmissionRate(alpha, beta)


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with reflect padding; sigma = 0 is a copy."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return img.copy()
    radius = max(1, int(math.ceil(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(x**2) / (2.0 * sigma**2))
    kernel /= kernel.sum()

    out = img.astype(np.float64)
    for axis in (-2, -1):
        padded = np.pad(out, [(radius, radius) if a == out.ndim + axis else (0, 0)
                              for a in range(out.ndim)], mode="reflect")
        acc = np.zeros_like(out)
        for t, kv in enumerate(kernel):
            sl = [slice(None)] * out.ndim
            sl[axis] = slice(t, t + out.shape[axis])
            acc += kv * padded[tuple(sl)]
        out = acc
    return out.astype(img.dtype)


def compose(trans: np.ndarray, refl: np.ndarray, rate: TransmissionRate,
            blur_sigma: float = 0.0) -> SynthSample:
    """Blur the reflection, mix per channel, clip last."""
    trans = np.asarray(trans, dtype=np.float32)
    refl = np.asarray(refl, dtype=np.float32)
    if trans.shape != refl.shape:
        raise ShapeError(f"compose: layer shapes differ, {trans.shape} vs {refl.shape}")
    if trans.ndim != 3 or trans.shape[0] != 3:
        raise ShapeError(f"compose: expected 3xHxW layers, got {trans.shape}")
    r_blur = gaussian_blur(refl, blur_sigma)
    a = rate.alpha.astype(np.float32)[:, None, None]
    b = rate.beta.astype(np.float32)[:, None, None]
    mix = np.clip(a * trans + b * r_blur - trans * r_blur, 0.0, 1.0)
    return SynthSample(mix=mix, trans=trans, refl=r_blur, rate=rate)


def make_texture(rng: SplitMix64, size: int) -> np.ndarray:
    """Multi-octave sinusoidal texture, normalized to mean 0.5, 3xHxW."""
    yy, xx = np.meshgrid(np.arange(size) / size, np.arange(size) / size, indexing="ij")
    luma = np.zeros((size, size))
    for octave in range(5):
        for _ in range(2):
            ang = rng.uniform(0.0, 2.0 * math.pi)
            freq = (2.0**octave) * rng.uniform(1.0, 2.0)
            phase = rng.uniform(0.0, 2.0 * math.pi)
            coord = xx * math.cos(ang) + yy * math.sin(ang)
            luma += (0.5**octave) * np.sin(2.0 * math.pi * freq * coord + phase)
    img = np.empty((3, size, size))
    for c in range(3):
        ang = rng.uniform(0.0, 2.0 * math.pi)
        freq = rng.uniform(1.0, 4.0)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        coord = xx * math.cos(ang) + yy * math.sin(ang)
        img[c] = luma + 0.35 * np.sin(2.0 * math.pi * freq * coord + phase)
    img -= img.mean()
    std = img.std()
    if std > 0:
        img *= 0.16 / std
    return np.clip(img + 0.5, 0.0, 1.0).astype(np.float32)


def _crop_or_texture(rng: SplitMix64, sources: list[np.ndarray] | None, size: int) -> np.ndarray:
    if not sources:
        return make_texture(rng, size)
    src = sources[rng.integer(len(sources))]
    _, h, w = src.shape
    top = rng.integer(h - size + 1) if h > size else 0
    left = rng.integer(w - size + 1) if w > size else 0
    return np.ascontiguousarray(src[:, top:top + size, left:left + size])


def _load_sources(source_dir, size: int) -> list[np.ndarray]:
    files = sorted(p for p in Path(source_dir).iterdir() if p.suffix.lower() in SUPPORTED)
    out = []
    for p in files:
        try:
            img = read_image(p)
        except Exception as exc:  # unreadable file: warn and move on
            warnings.warn(f"skipping unreadable source {p}: {exc}")
            continue
        if img.shape[1] < size or img.shape[2] < size:
            warnings.warn(f"skipping too-small source {p}: {img.shape[1]}x{img.shape[2]} < {size}")
            continue
        out.append(img)
    if not out:
        raise UnreflectError(f"no usable source images in {source_dir}")
    return out


def sample_name(index: int) -> str:
    return f"sample{index:05d}"


def build_dataset(out_path, count: int, seed: int, size: int = 64,
                  source_dir=None) -> Path:
    """Write ``count`` samples to a container plus a tab-separated manifest.

    Output bytes are a pure function of the arguments. Returns the manifest
    path (container path + ".manifest.tsv").
    """
    rng = SplitMix64(seed)
    sources = _load_sources(source_dir, size) if source_dir else None
    entries: dict[str, np.ndarray] = {}
    lines = []
    for k in range(count):
        trans = _crop_or_texture(rng, sources, size)
        refl = _crop_or_texture(rng, sources, size)
        rate = sample_rate(rng)
        sigma = rng.uniform(*BLUR_SIGMA_RANGE)
        s = compose(trans, refl, rate, blur_sigma=sigma)
        name = sample_name(k)
        entries[f"{name}/mix"] = s.mix
        entries[f"{name}/trans"] = s.trans
        entries[f"{name}/refl"] = s.refl
        entries[f"{name}/rate"] = rate.as_vector().astype(np.float32)
        vals = "\t".join(repr(float(v)) for v in rate.as_vector())
        lines.append(f"{name}\t{vals}")
    write_container(out_path, entries)
    manifest = Path(str(out_path) + ".manifest.tsv")
    manifest.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return manifest


def load_dataset(path) -> list[SynthSample]:
    """Read a dataset container back into SynthSample records."""
    from .container import read_container

    raw = read_container(path)
    samples: dict[str, dict[str, np.ndarray]] = {}
    for key, arr in raw.items():
        name, _, field = key.partition("/")
        samples.setdefault(name, {})[field] = arr
    out = []
    for name in sorted(samples):
        rec = samples[name]
        missing = {"mix", "trans", "refl", "rate"} - set(rec)
        if missing:
            raise UnreflectError(f"{path}: sample {name} missing entries {sorted(missing)}")
        out.append(SynthSample(
            mix=rec["mix"], trans=rec["trans"], refl=rec["refl"],
            rate=TransmissionRate.from_vector(rec["rate"]),
        ))
    return out
