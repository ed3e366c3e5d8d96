"""TNS binary tensor container.

Layout: magic b"TNS1", u32 little-endian rank, rank x u32 extents, then a
row-major float32 little-endian payload. Used for checkpoints, dataset
frames, and intermediate dumps.
"""

import struct

import numpy as np

from .errors import DataError

MAGIC = b"TNS1"


def write_tns(path, array):
    """Write a float array to ``path`` in TNS format (stored as float32)."""
    arr = np.ascontiguousarray(array, dtype=np.float32)
    if arr.ndim < 1:
        arr = arr.reshape(1)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes(order="C"))


def read_tns(path):
    """Read a TNS file into a float32 ndarray."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        raw = fh.read(4)
        if len(raw) != 4:
            raise DataError(f"{path}: truncated header")
        (rank,) = struct.unpack("<I", raw)
        if rank < 1 or rank > 8:
            raise DataError(f"{path}: unreasonable rank {rank}")
        raw = fh.read(4 * rank)
        if len(raw) != 4 * rank:
            raise DataError(f"{path}: truncated extents")
        shape = struct.unpack(f"<{rank}I", raw)
        count = int(np.prod(shape))
        payload = fh.read(4 * count)
        if len(payload) != 4 * count:
            raise DataError(
                f"{path}: payload holds {len(payload) // 4} floats, expected {count}"
            )
        data = np.frombuffer(payload, dtype="<f4").astype(np.float32, copy=True)
    return data.reshape(shape)
