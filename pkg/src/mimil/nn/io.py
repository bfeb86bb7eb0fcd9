"""Binary weight files.

Layout (little-endian)::

    b"MIML" | version u32 | tensor count u32 |
    per tensor: name length u16, UTF-8 name, rank u8, dims u32 * rank, float32 data |
    CRC32 (u32) of every preceding byte
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from ..errors import DataError

MAGIC = b"MIML"
FORMAT_VERSION = 1


def encode_weights(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise DataError(f"tensor name too long: {name[:40]}...")
        a = np.asarray(arr)
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    payload = b"".join(parts)
    return payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def decode_weights(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise DataError("not a MIML weight file")
    payload, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise DataError("weight file CRC mismatch")
    version, count = struct.unpack_from("<II", payload, 4)
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported weight format version {version}")
    pos, out = 12, {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", payload, pos)
            pos += 2
            name = payload[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<B", payload, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", payload, pos)
            pos += 4 * rank
            size = int(np.prod(shape, dtype=np.int64))
            out[name] = np.frombuffer(payload, dtype="<f4", count=size, offset=pos).reshape(shape).astype(np.float32)
            pos += 4 * size
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise DataError(f"truncated or corrupt weight file: {exc}") from exc
    if pos != len(payload):
        raise DataError("trailing bytes after last tensor")
    return out


def save_weights(path, tensors: dict[str, np.ndarray]) -> Path:
    path = Path(path)
    path.write_bytes(encode_weights(tensors))
    return path


def load_weights(path) -> dict[str, np.ndarray]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read weight file {path}: {exc}") from exc
    return decode_weights(blob)
