"""Writer for the FMAP v1 feature-map format.

Layout: magic b"FMAP", then four little-endian u32 (version = 1, width,
height, channels = 1), then row-major float32 values. No trailing bytes.
"""

import struct
from pathlib import Path

import numpy as np

MAGIC = b"FMAP"
VERSION = 1


def write_fmap(values: np.ndarray, path: str | Path) -> None:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"feature map must be a nonempty 2-d array, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("feature map contains non-finite values")
    height, width = arr.shape
    header = MAGIC + struct.pack("<4I", VERSION, width, height, 1)
    Path(path).write_bytes(header + arr.astype("<f4").tobytes())
