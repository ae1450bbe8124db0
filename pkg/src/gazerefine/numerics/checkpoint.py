"""Binary checkpoint format.

Layout (all little-endian)::

    b"GZCK"                     magic
    u32                         format version (1)
    u32                         tensor count
    per tensor:
        u16 + bytes             UTF-8 name
        u8                      rank
        u32 * rank              extents
        f32 * prod(extents)     row-major data
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from gazerefine.errors import FormatError

MAGIC = b"GZCK"
VERSION = 1


def encode(tensors):
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f4", order="C")  # ascontiguousarray would promote rank 0
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise FormatError(f"tensor {name!r} does not fit the checkpoint header")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode(blob):
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise FormatError("not a checkpoint: bad magic bytes")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    pos = 12
    out = OrderedDict()
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            n = int(np.prod(shape)) if rank else 1
            if pos + 4 * n > len(blob):
                raise FormatError(f"truncated data for tensor {name!r}")
            out[name] = np.frombuffer(blob, dtype="<f4", count=n, offset=pos).reshape(shape).astype(np.float32)
            pos += 4 * n
    except struct.error as exc:
        raise FormatError(f"truncated checkpoint header: {exc}") from None
    if pos != len(blob):
        raise FormatError(f"{len(blob) - pos} trailing bytes after last tensor")
    return out


def save_checkpoint(path, tensors):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(tensors))
    return path


def load_checkpoint(path):
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        return decode(blob)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None
