"""GKTN binary tensor files and JSON weight manifests.

GKTN layout::

    b"GKTN" | version 0x01 | ndim (1 byte) | ndim x uint64 LE extents | float32 LE data
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .exceptions import GKCMNError, ShapeError

MAGIC = b"GKTN"
VERSION = 1
_DATA = np.dtype("<f4")


class FormatError(GKCMNError, ValueError):
    """A file does not follow the expected on-disk format."""


def dumps_gktn(array) -> bytes:
    arr = np.asarray(array)
    if arr.ndim == 0 or arr.ndim > 255:
        raise ShapeError(f"GKTN stores 1..255 dimensions, got {arr.ndim}")
    if any(n < 1 for n in arr.shape):
        raise ShapeError(f"GKTN extents must be >= 1, got {arr.shape}")
    header = MAGIC + bytes([VERSION, arr.ndim]) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_DATA).tobytes()


def loads_gktn(buf: bytes) -> np.ndarray:
    if len(buf) < 6 or buf[:4] != MAGIC:
        raise FormatError("missing GKTN magic")
    if buf[4] != VERSION:
        raise FormatError(f"unsupported GKTN version {buf[4]}")
    ndim = buf[5]
    if ndim == 0:
        raise FormatError("GKTN ndim must be >= 1")
    end = 6 + 8 * ndim
    if len(buf) < end:
        raise FormatError("truncated GKTN header")
    shape = struct.unpack(f"<{ndim}Q", buf[6:end])
    count = int(np.prod(shape))
    if len(buf) - end != 4 * count:
        raise FormatError(f"GKTN payload holds {len(buf) - end} bytes, shape {shape} needs {4 * count}")
    return np.frombuffer(buf, dtype=_DATA, offset=end).reshape(shape).astype(np.float32)


def write_gktn(path, array) -> None:
    Path(path).write_bytes(dumps_gktn(array))


def read_gktn(path) -> np.ndarray:
    return loads_gktn(Path(path).read_bytes())


def write_json(path, obj) -> None:
    # sorted keys and a trailing newline keep reruns byte-identical
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())
