"""Binary checkpoint format.

Layout (all integers little-endian):
    magic     8 bytes  b"T3DCKPT\\0"
    version   u32
    count     u32
    per array:
        name_len u16, name utf-8
        dtype    u8   (0=float32, 1=float64, 2=int64)
        rank     u8
        extents  u32 * rank
        data     raw little-endian, C order
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"T3DCKPT\0"
VERSION = 1

_DTYPES = {0: "<f4", 1: "<f8", 2: "<i8"}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.int64): 2}


class CheckpointError(IOError):
    """Corrupt or incompatible checkpoint file."""


def save_checkpoint(path, arrays: dict[str, np.ndarray]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr)
            if arr.dtype not in _CODES:
                raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype(_DTYPES[_CODES[arr.dtype]], copy=False).tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read {path}: {e}") from e
    try:
        return _parse(raw)
    except (struct.error, UnicodeDecodeError, ValueError) as e:
        raise CheckpointError(f"corrupt checkpoint {path}: {e}") from e


def _parse(raw: bytes) -> dict[str, np.ndarray]:
    if raw[:8] != MAGIC:
        raise CheckpointError("bad magic bytes")
    version, count = struct.unpack_from("<II", raw, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}")
    off = 16
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + name_len].decode("utf-8")
        off += name_len
        code, rank = struct.unpack_from("<BB", raw, off)
        off += 2
        if code not in _DTYPES:
            raise CheckpointError(f"unknown dtype code {code}")
        shape = struct.unpack_from(f"<{rank}I", raw, off)
        off += 4 * rank
        dt = np.dtype(_DTYPES[code])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        if off + nbytes > len(raw):
            raise CheckpointError("truncated data section")
        out[name] = np.frombuffer(raw[off:off + nbytes], dtype=dt).reshape(shape).copy()
        off += nbytes
    if off != len(raw):
        raise CheckpointError("trailing bytes after last record")
    return out
