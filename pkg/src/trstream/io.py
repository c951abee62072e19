"""TRT1 dense tensor files.

Layout, all little-endian:

    offset 0   4 bytes   magic b"TRT1"
    offset 4   u32       order N
    offset 8   N x u64   dimensions I_1..I_N
    then       f64       prod(I_n) values, first index fastest
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"TRT1"
_MAX_ORDER = 64


def save_tensor(x: np.ndarray, path) -> None:
    x = np.asarray(x, dtype="<f8")
    header = MAGIC + struct.pack("<I", x.ndim) + struct.pack(f"<{x.ndim}Q", *x.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(x.tobytes(order="F"))


def load_tensor(path) -> np.ndarray:
    """Read a TRT1 file; raises :class:`FormatError` naming the failing byte offset."""
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) < 4:
            raise FormatError(f"file has {len(head)} bytes, too short for the magic", len(head))
        if head[:4] != MAGIC:
            raise FormatError(f"bad magic {head[:4]!r}, expected {MAGIC!r}", 0)
        if len(head) < 8:
            raise FormatError("file ends inside the order field", len(head))
        (order,) = struct.unpack("<I", head[4:8])
        if not 1 <= order <= _MAX_ORDER:
            raise FormatError(f"order {order} is outside [1, {_MAX_ORDER}]", 4)
        raw = fh.read(8 * order)
        if len(raw) < 8 * order:
            raise FormatError(
                f"file ends inside the dimension list ({len(raw)} of {8 * order} bytes)",
                8 + len(raw),
            )
        dims = struct.unpack(f"<{order}Q", raw)
        count = 1
        for k, d in enumerate(dims):
            if d == 0:
                raise FormatError(f"dimension {k + 1} is zero", 8 + 8 * k)
            count *= d
            if count * 8 > size:
                # checked while multiplying so absurd headers never overflow
                break
        start = 8 + 8 * order
        expected = count * 8
        actual = size - start
        if actual != expected:
            raise FormatError(
                f"payload holds {actual} bytes, header dims {tuple(dims)} need {expected}",
                start + min(actual, expected),
            )
        values = np.fromfile(fh, dtype="<f8", count=count)
    return values.astype(np.float64, copy=False).reshape(dims, order="F")
