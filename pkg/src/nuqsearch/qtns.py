"""Reader/writer for the ``QTNS`` little-endian tensor container.

Layout::

    b"QTNS"            magic
    u32                version (1)
    u32                ndim
    ndim x u64         dims
    u32                dtype code
    payload            row-major, little-endian

Dtype code 1 is float32 (the weight tensors). Code 2 (int8) and code 3
(float64) are used for quantized artifacts written by this package.
"""

from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"QTNS"
VERSION = 1

DTYPE_CODES = {
    1: np.dtype("<f4"),
    2: np.dtype("i1"),
    3: np.dtype("<f8"),
}


class QtnsError(ValueError):
    """Malformed or unsupported QTNS file."""


def dumps(array, dtype_code: int = 1) -> bytes:
    if dtype_code not in DTYPE_CODES:
        raise QtnsError(f"unknown dtype code {dtype_code}")
    arr = np.ascontiguousarray(np.asarray(array), dtype=DTYPE_CODES[dtype_code])
    if arr.ndim == 0:
        arr = arr.reshape(1)
    head = MAGIC + struct.pack("<II", VERSION, arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    head += struct.pack("<I", dtype_code)
    return head + arr.tobytes(order="C")


def loads(buf: bytes) -> np.ndarray:
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise QtnsError("bad magic: not a QTNS file")
    version, ndim = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise QtnsError(f"unsupported QTNS version {version}")
    off = 12
    need = off + 8 * ndim + 4
    if len(buf) < need:
        raise QtnsError("truncated QTNS header")
    dims = struct.unpack_from(f"<{ndim}Q", buf, off)
    off += 8 * ndim
    (code,) = struct.unpack_from("<I", buf, off)
    off += 4
    if code not in DTYPE_CODES:
        raise QtnsError(f"unknown dtype code {code}")
    dtype = DTYPE_CODES[code]
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 0
    if any(d < 1 for d in dims):
        raise QtnsError(f"invalid dimensions {dims}")
    if len(buf) - off != count * dtype.itemsize:
        raise QtnsError(
            f"payload size {len(buf) - off} does not match shape {tuple(dims)} ({count * dtype.itemsize} bytes)"
        )
    return np.frombuffer(buf, dtype=dtype, count=count, offset=off).reshape(dims).copy()


def write(path: str | os.PathLike, array, dtype_code: int = 1) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(array, dtype_code))


def read(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return loads(fh.read())
