"""Little-endian parameter files: magic, shape table, float32 payload.

Layout::

    magic      4 bytes ("VMM1" / "MEVT")
    version    uint32
    meta_len   uint32, then meta_len bytes of UTF-8 JSON
    count      uint32
    per tensor: name_len uint16, name bytes, ndim uint32, dims uint32 * ndim
    payload    float32 values of every tensor, in table order, C order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .core import DataError

FORMAT_VERSION = 1


def save_params(path, magic: bytes, params: dict, meta: dict | None = None) -> None:
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    out = [magic, struct.pack("<II", FORMAT_VERSION, len(meta_bytes)), meta_bytes,
           struct.pack("<I", len(params))]
    names = list(params)
    for name in names:
        arr = np.asarray(params[name])
        nb = name.encode("utf-8")
        out.append(struct.pack("<H", len(nb)) + nb)
        out.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
    for name in names:
        out.append(np.ascontiguousarray(params[name], dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(out))


def load_params(path, magic: bytes) -> tuple[dict, dict]:
    buf = Path(path).read_bytes()
    if buf[:4] != magic:
        raise DataError(f"{path}: expected magic {magic!r}, found {buf[:4]!r}")
    try:
        version, meta_len = struct.unpack_from("<II", buf, 4)
        if version != FORMAT_VERSION:
            raise DataError(f"{path}: unsupported format version {version}")
        pos = 12
        meta = json.loads(buf[pos:pos + meta_len].decode("utf-8"))
        pos += meta_len
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        table = []
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            dims = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            table.append((name, dims))
        params = {}
        for name, dims in table:
            n = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * n > len(buf):
                raise DataError(f"{path}: truncated payload")
            params[name] = np.frombuffer(buf, dtype="<f4", count=n, offset=pos).reshape(dims).astype(np.float64)
            pos += 4 * n
        if pos != len(buf):
            raise DataError(f"{path}: {len(buf) - pos} trailing bytes")
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt parameter file ({exc})") from None
    return params, meta
