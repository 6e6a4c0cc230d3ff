"""Named-tensor checkpoint files.

Layout (all integers little-endian)::

    magic   8 bytes  b"GNARCKPT"
    version u32      1
    count   u32
    count x record:
        name_len u32, name utf-8
        dtype    u8   (0 = float64, 1 = float32)
        ndim     u32, dims u64 * ndim
        crc32    u32  of the raw payload
        payload  prod(dims) * itemsize bytes, row-major little-endian
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"GNARCKPT"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_CODES = {np.dtype("float64"): 0, np.dtype("float32"): 1}


class CheckpointError(ValueError):
    def __init__(self, message: str, tensor: str | None = None):
        super().__init__(message)
        self.tensor = tensor


def save_checkpoint(path, tensors: Mapping[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        code = _CODES.get(arr.dtype)
        if code is None:
            raise TypeError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BI", code, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(struct.pack("<I", zlib.crc32(raw)))
        chunks.append(raw)
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a checkpoint; any damage raises ``CheckpointError`` naming the tensor."""
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError("bad magic header")
    pos = 8
    try:
        version, count = struct.unpack_from("<II", buf, pos)
    except struct.error as exc:
        raise CheckpointError("truncated header") from exc
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos += 8
    out: dict[str, np.ndarray] = {}
    name = None
    for index in range(count):
        try:
            (nlen,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            code, ndim = struct.unpack_from("<BI", buf, pos)
            pos += 5
            shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
            pos += 8 * ndim
            (crc,) = struct.unpack_from("<I", buf, pos)
            pos += 4
        except (struct.error, UnicodeDecodeError) as exc:
            label = name if name is not None else f"#{index}"
            raise CheckpointError(f"truncated record after tensor {label}", label) from exc
        dtype = _DTYPES.get(code)
        if dtype is None:
            raise CheckpointError(f"tensor {name}: unknown dtype code {code}", name)
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        raw = buf[pos:pos + nbytes]
        pos += nbytes
        if len(raw) != nbytes:
            raise CheckpointError(f"tensor {name}: payload truncated", name)
        if zlib.crc32(raw) != crc:
            raise CheckpointError(f"tensor {name}: checksum mismatch", name)
        out[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    if pos != len(buf):
        raise CheckpointError("trailing bytes after last tensor")
    return out
