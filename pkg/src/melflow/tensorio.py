"""Binary tensor serialization.

Each tensor block is a little-endian header (rank, dims, dtype tag) followed
by raw row-major values.  Named collections are wrapped in a small container
with a magic string; the checkpoint and evidence files reuse the same block
format after their own JSON headers.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

MAGIC = b"MFTENSR1"

_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAG_FOR = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class TensorFormatError(ValueError):
    pass


def write_block(f: BinaryIO, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr) if arr.ndim else arr.copy()
    if arr.dtype not in _TAG_FOR:
        raise TensorFormatError(f"unsupported dtype {arr.dtype}; use float32 or float64")
    f.write(struct.pack("<B", arr.ndim))
    for dim in arr.shape:
        f.write(struct.pack("<I", dim))
    f.write(struct.pack("<B", _TAG_FOR[arr.dtype]))
    f.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def read_block(f: BinaryIO) -> np.ndarray:
    raw = f.read(1)
    if len(raw) != 1:
        raise TensorFormatError("truncated tensor block (missing rank)")
    (rank,) = struct.unpack("<B", raw)
    dims = []
    for _ in range(rank):
        raw = f.read(4)
        if len(raw) != 4:
            raise TensorFormatError("truncated tensor block (missing dims)")
        dims.append(struct.unpack("<I", raw)[0])
    raw = f.read(1)
    if len(raw) != 1:
        raise TensorFormatError("truncated tensor block (missing dtype tag)")
    (tag,) = struct.unpack("<B", raw)
    if tag not in _DTYPE_TAGS:
        raise TensorFormatError(f"unknown dtype tag {tag}")
    dtype = _DTYPE_TAGS[tag]
    count = int(np.prod(dims)) if dims else 1
    payload = f.read(count * dtype.itemsize)
    if len(payload) != count * dtype.itemsize:
        raise TensorFormatError("truncated tensor payload")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


def write_named_block(f: BinaryIO, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    f.write(struct.pack("<H", len(encoded)))
    f.write(encoded)
    write_block(f, arr)


def read_named_block(f: BinaryIO) -> tuple[str, np.ndarray]:
    raw = f.read(2)
    if len(raw) != 2:
        raise TensorFormatError("truncated name header")
    (n,) = struct.unpack("<H", raw)
    name = f.read(n).decode("utf-8")
    return name, read_block(f)


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    """Write a named tensor container to ``path``."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            write_named_block(f, name, arr)


def load_tensors(path: str | Path) -> dict[str, np.ndarray]:
    """Read a named tensor container written by :func:`save_tensors`."""
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise TensorFormatError(f"{path}: not a tensor container (bad magic {magic!r})")
        (count,) = struct.unpack("<I", f.read(4))
        out = {}
        for _ in range(count):
            name, arr = read_named_block(f)
            out[name] = arr
    return out
