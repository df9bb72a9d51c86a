"""Image file IO (PNG and PPM/P6) as CxHxW float arrays in [0, 1]."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

SUPPORTED = {".png", ".ppm"}


def read_image(path) -> np.ndarray:
    """Load an RGB image to a 3xHxW float32 array in [0, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def write_image(path, arr: np.ndarray) -> None:
    """Save a 3xHxW array (clipped to [0, 1]) as PNG or PPM by extension."""
    path = Path(path)
    if path.suffix.lower() not in SUPPORTED:
        raise ValueError(f"unsupported image extension {path.suffix!r} (use .png or .ppm)")
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim != 3 or a.shape[0] != 3:
        raise ValueError(f"expected a 3xHxW array, got shape {a.shape}")
    u8 = np.clip(np.rint(np.clip(a, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(u8.transpose(1, 2, 0), mode="RGB").save(path)
