"""Sectioned binary checkpoint files.

Layout (all integers little-endian)::

    magic    8 bytes  b"CNMGCKPT"
    version  u32
    count    u32
    count x entry:
        name_len u16, name (utf-8)
        dtype    1 byte, b"f" = float32, b"d" = float64
        ndim     u8, dims u32 * ndim
        data     raw little-endian floats, row-major
"""
from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"CNMGCKPT"
VERSION = 1

_DTYPES = {b"f": np.dtype("<f4"), b"d": np.dtype("<f8")}
_CODES = {np.dtype("float32"): b"f", np.dtype("float64"): b"d"}


class CheckpointError(ValueError):
    pass


def dumps(entries: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, arr in entries.items():
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise CheckpointError(f"entry {name!r}: unsupported dtype {arr.dtype}")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(code)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 16
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos : pos + name_len].decode("utf-8")
            pos += name_len
            dtype = _DTYPES[blob[pos : pos + 1]]
            pos += 1
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            if pos + nbytes > len(blob):
                raise CheckpointError(f"entry {name!r} truncated")
            out[name] = np.frombuffer(blob, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos).reshape(shape).copy()
            pos += nbytes
    except (struct.error, KeyError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
    if pos != len(blob):
        raise CheckpointError("trailing bytes after last entry")
    return out


def save(path: str | os.PathLike, entries: Mapping[str, np.ndarray]) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(entries))
    os.replace(tmp, path)


def load(path: str | os.PathLike) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
