"""Minimal PNG codec: 8-bit truecolor writer, 8-bit truecolor/grayscale reader."""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .grid import MalformedImage, PixelGrid

SIGNATURE = b"\x89PNG\r\n\x1a\n"
COLOR_GRAY = 0
COLOR_RGB = 2
_CHANNELS = {COLOR_GRAY: 1, COLOR_RGB: 3}


def _chunk(kind: bytes, body: bytes) -> bytes:
    return struct.pack(">I", len(body)) + kind + body + struct.pack(">I", zlib.crc32(kind + body))


def write_png(grid: PixelGrid, level: int = 6) -> bytes:
    """Truecolor PNG (bit depth 8, color type 2, no interlace, filter 0 rows)."""
    w, h = grid.width, grid.height
    raw = np.zeros((h, 1 + 3 * w), dtype=np.uint8)
    raw[:, 1:] = grid.pixels.reshape(h, 3 * w)
    ihdr = struct.pack(">IIBBBBB", w, h, 8, COLOR_RGB, 0, 0, 0)
    return (SIGNATURE + _chunk(b"IHDR", ihdr) + _chunk(b"IDAT", zlib.compress(raw.tobytes(), level))
            + _chunk(b"IEND", b""))


def _iter_chunks(data: bytes):
    if data[:8] != SIGNATURE:
        raise MalformedImage("PNG: bad signature")
    pos = 8
    while True:
        if pos + 12 > len(data):
            raise MalformedImage("PNG: truncated chunk")
        length, kind = struct.unpack_from(">I4s", data, pos)
        end = pos + 12 + length
        if end > len(data):
            raise MalformedImage(f"PNG: chunk {kind!r} overruns the file")
        body = data[pos + 8:pos + 8 + length]
        (crc,) = struct.unpack_from(">I", data, pos + 8 + length)
        if zlib.crc32(kind + body) != crc:
            raise MalformedImage(f"PNG: CRC mismatch in {kind!r}")
        yield kind, body
        if kind == b"IEND":
            return
        pos = end


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    return b if pb <= pc else c


def _unfilter(raw: np.ndarray, h: int, rowlen: int, bpp: int) -> np.ndarray:
    out = np.zeros((h, rowlen), dtype=np.uint8)
    prev = np.zeros(rowlen, dtype=np.uint8)
    for y in range(h):
        ftype = raw[y, 0]
        line = raw[y, 1:]
        if ftype == 0:
            cur = line.copy()
        elif ftype == 1:
            # Sub: running sum along each channel
            cur = (np.cumsum(line.reshape(-1, bpp), axis=0, dtype=np.uint64) % 256).astype(np.uint8).ravel()
        elif ftype == 2:
            cur = line + prev
        elif ftype in (3, 4):
            cur = bytearray(rowlen)
            up = prev.tolist()
            ln = line.tolist()
            for x in range(rowlen):
                left = cur[x - bpp] if x >= bpp else 0
                if ftype == 3:
                    pred = (left + up[x]) >> 1
                else:
                    pred = _paeth(left, up[x], up[x - bpp] if x >= bpp else 0)
                cur[x] = (ln[x] + pred) & 0xFF
            cur = np.frombuffer(bytes(cur), dtype=np.uint8)
        else:
            raise MalformedImage(f"PNG: unknown filter type {ftype}")
        out[y] = cur
        prev = out[y]
    return out


def read_png(data: bytes) -> PixelGrid:
    """Decode an 8-bit truecolor or grayscale, non-interlaced PNG.

    Grayscale samples are replicated into R = G = B.
    """
    header = None
    idat = []
    for kind, body in _iter_chunks(data):
        if kind == b"IHDR":
            if len(body) != 13:
                raise MalformedImage("PNG: bad IHDR length")
            header = struct.unpack(">IIBBBBB", body)
        elif kind == b"IDAT":
            idat.append(body)
    if header is None:
        raise MalformedImage("PNG: missing IHDR")
    w, h, depth, color, comp, flt, interlace = header
    if w < 1 or h < 1:
        raise MalformedImage("PNG: zero-sized image")
    if depth != 8 or color not in _CHANNELS or comp or flt or interlace:
        raise MalformedImage(f"PNG: unsupported format depth={depth} color={color} interlace={interlace}")
    bpp = _CHANNELS[color]
    rowlen = w * bpp
    expected = h * (rowlen + 1)
    d = zlib.decompressobj()
    try:
        raw = d.decompress(b"".join(idat), expected)
    except zlib.error as exc:
        raise MalformedImage(f"PNG: corrupt image data: {exc}") from None
    if len(raw) != expected:
        raise MalformedImage(f"PNG: image data holds {len(raw)} bytes, expected {expected}")
    rows = _unfilter(np.frombuffer(raw, dtype=np.uint8).reshape(h, rowlen + 1), h, rowlen, bpp)
    if color == COLOR_GRAY:
        px = np.repeat(rows.reshape(h, w, 1), 3, axis=2)
    else:
        px = rows.reshape(h, w, 3)
    return PixelGrid(px)
