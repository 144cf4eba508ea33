"""Binary parameter checkpoints.

Layout (all integers little-endian)::

    b"TUNI" | version u32 | count u32 |
    count x [name_len u32 | name utf-8 | dtype u8 | rank u8 | dims u32 x rank | payload] |
    crc32 u32 over every preceding byte

dtype codes: 0 = float32, 1 = float64.
"""
from __future__ import annotations

import os
import struct
import zlib

import numpy as np

from tuni.errors import (
    BadMagicError,
    CheckpointError,
    ChecksumError,
    MissingParameterError,
    ShapeMismatchError,
    VersionError,
)
from tuni.layers import ParamRegistry

MAGIC = b"TUNI"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def dumps(named_arrays) -> bytes:
    items = list(named_arrays)
    parts = [MAGIC, struct.pack("<II", VERSION, len(items))]
    for name, arr in items:
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def loads(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}")
    if len(buf) < 16:
        raise CheckpointError("checkpoint truncated")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise ChecksumError("CRC32 mismatch")
    version, count = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos:pos + n].decode("utf-8")
            pos += n
            code, rank = struct.unpack_from("<BB", body, pos)
            pos += 2
            dims = struct.unpack_from(f"<{rank}I", body, pos)
            pos += 4 * rank
            dt = _DTYPES[code]
            nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
            if pos + nbytes > len(body):
                raise CheckpointError(f"{name}: payload truncated")
            out[name] = np.frombuffer(body, dt, count=nbytes // dt.itemsize, offset=pos).reshape(dims).astype(dt.newbyteorder("="))
            pos += nbytes
    except (struct.error, KeyError, UnicodeDecodeError) as e:
        raise CheckpointError(f"malformed record: {e}") from None
    return out


def save(path: str | os.PathLike, registry: ParamRegistry) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps((name, t.data) for name, t in registry.items()))


def load(path: str | os.PathLike, registry: ParamRegistry, strict: bool = True, prefix: str = "encoder.") -> list[str]:
    """Copy stored values into ``registry``; returns the names loaded.

    Strict mode requires the stored names to equal the registry's names
    exactly. Non-strict mode loads only registry names starting with
    ``prefix`` (the pretrain -> finetune bridge) and requires all of them.
    """
    with open(path, "rb") as fh:
        stored = loads(fh.read())
    if strict:
        wanted = registry.names()
        extra = sorted(set(stored) - set(wanted))
        if extra:
            raise MissingParameterError(f"checkpoint holds names unknown to the model: {extra[:5]}")
    else:
        wanted = [n for n in registry.names() if n.startswith(prefix)]
    missing = [n for n in wanted if n not in stored]
    if missing:
        raise MissingParameterError(f"checkpoint lacks {len(missing)} parameters, e.g. {missing[:5]}")
    for name in wanted:
        t = registry[name]
        if stored[name].shape != t.shape:
            raise ShapeMismatchError(f"{name}: stored {stored[name].shape}, model {t.shape}")
    for name in wanted:
        t = registry[name]
        t.data = stored[name].astype(t.dtype).copy()
        t.grad = None
    return wanted
