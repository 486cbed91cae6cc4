"""DDPT binary tensor blobs.

Layout (no padding, no compression)::

    b"DDPT" | version u8 (=1) | dtype u8 | ndim u8 | ndim x u32 LE dims | LE payload

dtype codes: 0 float32, 1 float64, 2 uint32 (used for sparse site coordinates).
"""

import struct
from pathlib import Path

import numpy as np

MAGIC = b"DDPT"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<u4")}
_CODES = {v: k for k, v in DTYPES.items()}


class BlobFormatError(ValueError):
    """Malformed DDPT blob. ``field`` names the part of the header or payload at fault."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message

    def to_record(self):
        return {"error": "blob_format", "field": self.field, "message": self.message}


def encode(t):
    t = np.asarray(t)
    code = _CODES.get(t.dtype.newbyteorder("<"))
    if code is None:
        raise TypeError(f"unsupported dtype {t.dtype}")
    if t.ndim > 255:
        raise ValueError("too many dimensions")
    header = MAGIC + bytes([VERSION, code, t.ndim]) + struct.pack(f"<{t.ndim}I", *t.shape)
    return header + np.ascontiguousarray(t, dtype=DTYPES[code]).tobytes()


def decode(buf):
    buf = bytes(buf)
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BlobFormatError("magic", "bad magic")
    if len(buf) < 7:
        raise BlobFormatError("header", "truncated header")
    version, code, ndim = buf[4], buf[5], buf[6]
    if version != VERSION:
        raise BlobFormatError("version", f"unsupported version {version}")
    if code not in DTYPES:
        raise BlobFormatError("dtype", f"unknown dtype code {code}")
    end = 7 + 4 * ndim
    if len(buf) < end:
        raise BlobFormatError("dims", "truncated dims")
    shape = struct.unpack(f"<{ndim}I", buf[7:end])
    dtype = DTYPES[code]
    n = int(np.prod(shape, dtype=np.int64))
    need = n * dtype.itemsize
    payload = buf[end:]
    if len(payload) < need:
        raise BlobFormatError("payload", "truncated payload")
    if len(payload) > need:
        raise BlobFormatError("payload", f"{len(payload) - need} trailing bytes")
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape)
    return arr.astype(dtype.newbyteorder("="), copy=True)


def write_tensor(t, path):
    Path(path).write_bytes(encode(t))


def read_tensor(path):
    return decode(Path(path).read_bytes())
