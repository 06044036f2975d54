"""Reader/writer for VTB, a minimal little-endian binary tensor format.

Layout: magic ``b"VTB1"``, one byte dtype code, one byte ndim, ``ndim``
unsigned 64-bit dims, then the raw row-major payload.
"""

import os
import struct

import numpy as np

MAGIC = b"VTB1"

_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("u1")}


class VTBError(ValueError):
    pass


def dtype_code(dtype):
    dt = np.dtype(dtype)
    for code, ref in _CODES.items():
        if dt.kind == ref.kind and dt.itemsize == ref.itemsize:
            return code
    raise VTBError(f"dtype {dt} is not representable in VTB (f32, f64, u8 only)")


def dumps(array):
    a = np.asarray(array)
    code = dtype_code(a.dtype)
    if a.ndim > 255:
        raise VTBError("too many dimensions")
    a = np.asarray(a, dtype=_CODES[code], order="C")
    header = MAGIC + struct.pack("<BB", code, a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
    return header + a.tobytes(order="C")


def loads(buf):
    buf = bytes(buf)
    if len(buf) < 6 or buf[:4] != MAGIC:
        raise VTBError("bad magic: not a VTB1 file")
    code, ndim = struct.unpack_from("<BB", buf, 4)
    if code not in _CODES:
        raise VTBError(f"unknown dtype code {code}")
    off = 6 + 8 * ndim
    if len(buf) < off:
        raise VTBError("truncated header")
    shape = struct.unpack_from(f"<{ndim}Q", buf, 6)
    dt = _CODES[code]
    count = int(np.prod(shape, dtype=np.uint64)) if ndim else 1
    need = off + count * dt.itemsize
    if len(buf) < need:
        raise VTBError(f"truncated payload: expected {need - off} bytes, got {len(buf) - off}")
    if len(buf) > need:
        raise VTBError(f"trailing bytes after payload ({len(buf) - need})")
    return np.frombuffer(buf, dtype=dt, count=count, offset=off).reshape(shape).copy()


def save(path, array):
    data = dumps(array)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
