"""Named-array container used for checkpoints and datasets.

Layout: magic bytes "RDN1", entry count (u32 little-endian), then per entry
a name length (u16 LE) + UTF-8 name, rank (u8), extents (u32 LE each), and
the raw little-endian float32 payload. Round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .errors import UnreflectError

MAGIC = b"RDN1"


class ContainerError(UnreflectError, ValueError):
    """Malformed container bytes or invalid entries."""


def write_container(path, entries: dict[str, np.ndarray]) -> None:
    """Write name -> array pairs in the given order; values cast to float32."""
    names = list(entries)
    if len(set(names)) != len(names):
        raise ContainerError("duplicate entry names")
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", len(names))
    for name in names:
        arr = np.ascontiguousarray(np.asarray(entries[name], dtype="<f4"))
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ContainerError(f"entry name too long: {name[:32]!r}...")
        if arr.ndim > 0xFF:
            raise ContainerError(f"entry rank too large: {arr.ndim}")
        blob += struct.pack("<H", len(raw))
        blob += raw
        blob += struct.pack("<B", arr.ndim)
        for ext in arr.shape:
            blob += struct.pack("<I", ext)
        blob += arr.tobytes()
    Path(path).write_bytes(bytes(blob))


def read_container(path) -> "OrderedDict[str, np.ndarray]":
    """Read a container back into an ordered name -> float32 array mapping."""
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise ContainerError(f"{path}: bad magic {blob[:4]!r}")
    pos = 4
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        shape = struct.unpack_from(f"<{rank}I", blob, pos) if rank else ()
        pos += 4 * rank
        n = int(np.prod(shape, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=pos).reshape(shape)
        pos += 4 * n
        if name in out:
            raise ContainerError(f"{path}: duplicate entry name {name!r}")
        out[name] = arr.copy()
    if pos != len(blob):
        raise ContainerError(f"{path}: {len(blob) - pos} trailing bytes")
    return out


def encode_text(text: str) -> np.ndarray:
    """UTF-8 text as a float32 array of byte values (container-storable)."""
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float32)


def decode_text(arr: np.ndarray) -> str:
    return np.asarray(arr).astype(np.uint8).tobytes().decode("utf-8")
