"""Writer/reader for the engine's ".aat" tensor container.

Layout: magic "AAT1" | u32le rank | rank x u32le dims | u8 dtype code
(0 = float32 little-endian) | raw C-order payload. This is an independent
implementation against the documented format, not a shared module, so the
exporter couples to the engine only through bytes on disk.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"AAT1"
DTYPE_FP32 = 0

__all__ = ["MAGIC", "DTYPE_FP32", "write_aat", "read_aat"]


def write_aat(path: str | Path, array: np.ndarray) -> Path:
    path = Path(path)
    arr = np.ascontiguousarray(array, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(struct.pack("B", DTYPE_FP32))
        fh.write(arr.tobytes())
    return path


def read_aat(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}")
    (rank,) = struct.unpack_from("<I", raw, 4)
    dims = struct.unpack_from(f"<{rank}I", raw, 8)
    off = 8 + 4 * rank
    if raw[off] != DTYPE_FP32:
        raise ValueError(f"{path}: unsupported dtype code {raw[off]}")
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    payload = raw[off + 1:]
    if len(payload) != 4 * count:
        raise ValueError(f"{path}: payload/header element count mismatch")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float64)
