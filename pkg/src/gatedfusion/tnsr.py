"""TNSR binary tensor files.

Layout: bytes 0-3 magic ``TNSR``, byte 4 version (1), byte 5 dtype code
(1 = float64, 2 = float32), bytes 6-7 reserved zero, u32 little-endian ndim,
ndim u64 little-endian extents, then the raw little-endian row-major payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"TNSR"
VERSION = 1
_DTYPES = {1: np.dtype("<f8"), 2: np.dtype("<f4")}
_CODES = {np.dtype("float64"): 1, np.dtype("float32"): 2}


class TnsrFormatError(ValueError):
    """Raised for malformed TNSR files."""


def write_tnsr(path, array: np.ndarray):
    array = np.ascontiguousarray(array)
    code = _CODES.get(array.dtype)
    if code is None:
        raise TnsrFormatError(f"unsupported dtype {array.dtype}; use float64 or float32")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BBH", VERSION, code, 0))
        fh.write(struct.pack("<I", array.ndim))
        fh.write(struct.pack(f"<{array.ndim}Q", *array.shape))
        fh.write(array.astype(array.dtype.newbyteorder("<"), copy=False).tobytes())


def read_tnsr(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise TnsrFormatError(f"{path}: bad magic {raw[:4]!r}")
    version, code, reserved = struct.unpack_from("<BBH", raw, 4)
    if version != VERSION:
        raise TnsrFormatError(f"{path}: unsupported version {version}")
    if reserved != 0:
        raise TnsrFormatError(f"{path}: reserved bytes must be zero")
    dtype = _DTYPES.get(code)
    if dtype is None:
        raise TnsrFormatError(f"{path}: unknown dtype code {code}")
    (ndim,) = struct.unpack_from("<I", raw, 8)
    shape = struct.unpack_from(f"<{ndim}Q", raw, 12)
    offset = 12 + 8 * ndim
    count = int(np.prod(shape)) if ndim else 1
    expected = offset + count * dtype.itemsize
    if len(raw) != expected:
        raise TnsrFormatError(
            f"{path}: payload size {len(raw) - offset} does not match shape {shape}"
        )
    return np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape(shape).copy()
