"""SKT: a minimal binary tensor container.

Layout on disk::

    8 bytes   magic  b"SKTENSR\\0"
    u32 LE    version (1)
    u32 LE    header length in bytes
    header    UTF-8 JSON {"dtype": "f32"|"f64", "shape": [...]}
    payload   little-endian values, row-major

The writer emits the header with compact separators and keys in the order
above, so reading and re-writing a file it produced is byte-identical.
"""

from __future__ import annotations

import json
import os
import struct
from math import prod

import numpy as np

MAGIC = b"SKTENSR\0"
VERSION = 1
DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


class SktFormatError(ValueError):
    pass


def encode_skt(array, dtype: str | None = None) -> bytes:
    arr = np.asarray(array)
    if dtype is None:
        dtype = "f32" if arr.dtype == np.float32 else "f64"
    if dtype not in DTYPES:
        raise SktFormatError(f"unsupported dtype {dtype!r}")
    if arr.ndim < 1:
        arr = arr.reshape(1)
    header = json.dumps({"dtype": dtype, "shape": list(arr.shape)}, separators=(",", ":")).encode()
    payload = np.ascontiguousarray(arr, dtype=DTYPES[dtype]).tobytes()
    return MAGIC + struct.pack("<II", VERSION, len(header)) + header + payload


def decode_skt(data: bytes) -> tuple[np.ndarray, str]:
    if len(data) < 16 or data[:8] != MAGIC:
        raise SktFormatError("not an SKT file (bad magic)")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise SktFormatError(f"unsupported SKT version {version}")
    if 16 + hlen > len(data):
        raise SktFormatError("truncated header")
    try:
        header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
        dtype, shape = header["dtype"], header["shape"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise SktFormatError(f"malformed header: {exc}") from None
    if dtype not in DTYPES:
        raise SktFormatError(f"unsupported dtype {dtype!r}")
    if (
        not isinstance(shape, list)
        or len(shape) < 1
        or any(isinstance(s, bool) or not isinstance(s, int) or s < 0 for s in shape)
    ):
        raise SktFormatError(f"bad shape {shape!r}")
    payload = data[16 + hlen :]
    expected = prod(shape) * DTYPES[dtype].itemsize
    if len(payload) != expected:
        raise SktFormatError(f"payload has {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype=DTYPES[dtype]).reshape(shape).copy()
    return arr, dtype


def read_skt(path) -> np.ndarray:
    with open(path, "rb") as f:
        return decode_skt(f.read())[0]


def write_skt(path, array, dtype: str | None = None) -> None:
    data = encode_skt(array, dtype)
    tmp = f"{path}.tmp-{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)
