"""Binary model-parameter container.

Byte layout (all integers little-endian)::

    magic      4 bytes   b"PMFN"
    version    u32       1
    meta_len   u32       length of the metadata blob
    meta       bytes     UTF-8 JSON (architecture config, task, class labels, ...)
    n_tensors  u32
    n_tensors times:
        name_len  u16
        name      bytes  UTF-8
        rows      u32
        cols      u32
        data      rows*cols float64, little-endian, row-major

Tensors are written in the order given (the model's parameter order, then
buffers), so identical models produce identical files.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import DataError, MissingFileError

MAGIC = b"PMFN"
VERSION = 1


class ModelFileError(DataError):
    pass


def write_atomic(path, payload: bytes):
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode(tensors: dict[str, np.ndarray], meta: dict) -> bytes:
    blob = json.dumps(meta, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        if arr.ndim != 2:
            raise ValueError(f"tensor {name!r} must be 2-D, got shape {arr.shape}")
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<II", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode(payload: bytes) -> tuple[dict[str, np.ndarray], dict]:
    view = memoryview(payload)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise ModelFileError("model file is truncated")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise ModelFileError("not a model file (bad magic bytes)")
    version, meta_len = struct.unpack("<II", take(8))
    if version != VERSION:
        raise ModelFileError(f"unsupported model file version {version}")
    meta = json.loads(bytes(take(meta_len)).decode())
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode()
        rows, cols = struct.unpack("<II", take(8))
        data = np.frombuffer(bytes(take(8 * rows * cols)), dtype="<f8")
        tensors[name] = data.reshape(rows, cols).astype(np.float64)
    if pos != len(view):
        raise ModelFileError("trailing bytes after last tensor")
    return tensors, meta


def save_tensors(path, tensors: dict[str, np.ndarray], meta: dict):
    write_atomic(path, encode(tensors, meta))


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"no such model file: {path}")
    return decode(path.read_bytes())
