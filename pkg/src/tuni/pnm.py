"""Binary PNM (P5 grayscale / P6 RGB, maxval 255) reader and writer."""
from __future__ import annotations

import os

import numpy as np

from tuni.errors import PNMError

_WS = b" \t\n\r\v\f"


def _header(buf: bytes) -> tuple[bytes, int, int, int, int]:
    """Parse magic, width, height, maxval; return them plus the payload offset."""
    if len(buf) < 2:
        raise PNMError("file too short for a PNM header", 0)
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise PNMError(f"unsupported magic {magic!r}", 0)
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(buf):
            raise PNMError("header ends early", pos)
        c = buf[pos:pos + 1]
        if c in _WS:
            pos += 1
        elif c == b"#":
            end = buf.find(b"\n", pos)
            if end < 0:
                raise PNMError("unterminated header comment", pos)
            pos = end + 1
        elif c.isdigit():
            start = pos
            while pos < len(buf) and buf[pos:pos + 1].isdigit():
                pos += 1
            fields.append(int(buf[start:pos]))
        else:
            raise PNMError(f"unexpected header byte {c!r}", pos)
    if pos >= len(buf) or buf[pos:pos + 1] not in _WS:
        raise PNMError("missing whitespace after maxval", pos)
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise PNMError(f"invalid dimensions {width}x{height}", 2)
    if maxval != 255:
        raise PNMError(f"only maxval 255 is supported, got {maxval}", pos)
    return magic, width, height, maxval, pos + 1


def decode(buf: bytes, raw: bool = False) -> np.ndarray:
    magic, width, height, _, offset = _header(buf)
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    if len(buf) - offset < need:
        raise PNMError(f"truncated payload: need {need} bytes, have {len(buf) - offset}", len(buf))
    data = np.frombuffer(buf, np.uint8, count=need, offset=offset)
    img = data.reshape(height, width, channels) if channels == 3 else data.reshape(height, width)
    if raw:
        return img.copy()
    return img.astype(np.float32) / 255.0


def encode(img: np.ndarray) -> bytes:
    """Float image in [0, 1] (H x W or H x W x 1 -> P5, H x W x 3 -> P6), or uint8 raw values."""
    img = np.asarray(img)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot encode image of shape {img.shape}")
    if img.dtype == np.uint8:
        payload = img
    else:
        # values are non-negative after clipping, so floor(x + 0.5) rounds half away from zero
        payload = np.floor(np.clip(img.astype(np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    h, w = img.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode() + np.ascontiguousarray(payload).tobytes()


def read_pnm(path: str | os.PathLike, raw: bool = False) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode(fh.read(), raw=raw)


def write_pnm(path: str | os.PathLike, img: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(img))
