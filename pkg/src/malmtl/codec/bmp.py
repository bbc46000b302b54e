"""Windows bitmap encoding: 24-bit uncompressed and 8-bit RLE8."""

from __future__ import annotations

import struct

import numpy as np

from .grid import MalformedImage, PixelGrid

FILE_HEADER = struct.Struct("<2sIHHI")
INFO_HEADER = struct.Struct("<IiiHHIIiiII")
HEADER_SIZE = FILE_HEADER.size + INFO_HEADER.size  # 54
PIXELS_PER_METER = 2835  # 72 dpi

BI_RGB = 0
BI_RLE8 = 1


def row_stride_24bpp(width: int) -> int:
    """Bytes per stored 24-bit row: 3*width rounded up to a multiple of 4."""
    if width < 1:
        raise ValueError("width must be >= 1")
    return 4 * (-(-3 * width // 4))


def _headers(width, height, bpp, compression, image_size, palette_size) -> bytes:
    offset = HEADER_SIZE + palette_size
    n_colors = palette_size // 4
    return (FILE_HEADER.pack(b"BM", offset + image_size, 0, 0, offset)
            + INFO_HEADER.pack(40, width, height, 1, bpp, compression, image_size,
                               PIXELS_PER_METER, PIXELS_PER_METER, n_colors, 0))


def write_bmp24(grid: PixelGrid) -> bytes:
    """Uncompressed 24-bit BMP, rows bottom-up, BGR order, zero row padding."""
    w, h = grid.width, grid.height
    stride = row_stride_24bpp(w)
    body = np.zeros((h, stride), dtype=np.uint8)
    body[:, :3 * w] = grid.pixels[::-1, :, ::-1].reshape(h, 3 * w)
    return _headers(w, h, 24, BI_RGB, stride * h, 0) + body.tobytes()


def luminance_index(grid: PixelGrid) -> np.ndarray:
    """8-bit gray index per pixel: round(0.299 R + 0.587 G + 0.114 B)."""
    px = grid.pixels.astype(np.float64)
    lum = 0.299 * px[..., 0] + 0.587 * px[..., 1] + 0.114 * px[..., 2]
    return np.clip(np.floor(lum + 0.5), 0, 255).astype(np.uint8)


def _encode_row(row: bytes, out: bytearray) -> None:
    n = len(row)
    i = 0
    while i < n:
        v = row[i]
        run = 1
        while i + run < n and run < 255 and row[i + run] == v:
            run += 1
        if run >= 2:
            out += bytes((run, v))
            i += run
            continue
        # literal block: stop where a repeat begins
        j = i
        while j < n and j - i < 255 and not (j + 1 < n and row[j] == row[j + 1]):
            j += 1
        lit = row[i:j]
        if len(lit) >= 3:
            out += bytes((0, len(lit))) + lit
            if len(lit) % 2:
                out.append(0)
        else:
            for b in lit:
                out += bytes((1, b))
        i = j


def encode_rle8(indices: np.ndarray) -> bytes:
    """RLE8-encode rows of an (H, W) uint8 index image, in the given row order.

    Every row ends with an end-of-line marker (00 00); the stream ends with
    end-of-bitmap (00 01).
    """
    rows = np.asarray(indices, dtype=np.uint8)
    out = bytearray()
    for row in rows:
        _encode_row(row.tobytes(), out)
        out += b"\x00\x00"
    out += b"\x00\x01"
    return bytes(out)


def decode_rle8(data: bytes, width: int, height: int) -> np.ndarray:
    """Decode an RLE8 stream into an (H, W) index image in stream row order.

    Pixels skipped by delta escapes or a premature end are left at 0.
    """
    img = np.zeros((height, width), dtype=np.uint8)
    x = y = 0
    i = 0
    n = len(data)
    while True:
        if i + 2 > n:
            raise MalformedImage("RLE8: stream ends without an end-of-bitmap marker")
        count, val = data[i], data[i + 1]
        i += 2
        if count:
            if y >= height or x + count > width:
                raise MalformedImage("RLE8: run overflows the bitmap")
            img[y, x:x + count] = val
            x += count
        elif val == 0:
            x, y = 0, y + 1
        elif val == 1:
            return img
        elif val == 2:
            if i + 2 > n:
                raise MalformedImage("RLE8: truncated delta escape")
            x, y = x + data[i], y + data[i + 1]
            i += 2
            if x > width or y > height:
                raise MalformedImage("RLE8: delta moves outside the bitmap")
        else:
            if y >= height or x + val > width or i + val > n:
                raise MalformedImage("RLE8: absolute block overflows")
            img[y, x:x + val] = np.frombuffer(data, dtype=np.uint8, count=val, offset=i)
            x += val
            i += val + (val & 1)


def write_bmp8_rle(grid: PixelGrid) -> bytes:
    """8-bit grayscale-palette BMP compressed with RLE8.

    Each pixel is quantized to its luminance index; the 256-entry palette maps
    index ``v`` to gray ``(v, v, v)``.
    """
    idx = luminance_index(grid)
    data = encode_rle8(idx[::-1])
    palette = np.repeat(np.arange(256, dtype=np.uint8), 4).reshape(256, 4)
    palette[:, 3] = 0
    return _headers(grid.width, grid.height, 8, BI_RLE8, len(data), 1024) + palette.tobytes() + data


def read_bmp_indexed(data: bytes) -> tuple[np.ndarray, np.ndarray]:
    """Read an 8-bit BMP (uncompressed or RLE8): (H, W) indices, (N, 3) RGB palette."""
    hdr = _read_headers(data)
    if hdr["bpp"] != 8:
        raise MalformedImage(f"BMP: expected 8 bits per pixel, got {hdr['bpp']}")
    return _indexed_pixels(data, hdr)


def _read_headers(data: bytes) -> dict:
    if len(data) < HEADER_SIZE:
        raise MalformedImage("BMP: truncated header")
    magic, _size, _r1, _r2, offset = FILE_HEADER.unpack_from(data, 0)
    if magic != b"BM":
        raise MalformedImage("BMP: bad signature")
    dib_size = struct.unpack_from("<I", data, 14)[0]
    if dib_size < 40 or 14 + dib_size > len(data):
        raise MalformedImage(f"BMP: unsupported info header size {dib_size}")
    (_dib, width, height, planes, bpp, compression, image_size,
     _xppm, _yppm, n_colors, _important) = INFO_HEADER.unpack_from(data, 14)
    if width < 1 or height == 0 or planes != 1:
        raise MalformedImage(f"BMP: invalid geometry {width}x{height}, planes={planes}")
    if offset > len(data):
        raise MalformedImage("BMP: pixel offset beyond end of file")
    return dict(width=width, height=abs(height), top_down=height < 0, bpp=bpp, compression=compression,
                image_size=image_size, n_colors=n_colors, offset=offset, palette_at=14 + dib_size)


def _indexed_pixels(data: bytes, hdr: dict):
    w, h = hdr["width"], hdr["height"]
    n_colors = hdr["n_colors"] or 256
    if n_colors > 256 or hdr["palette_at"] + 4 * n_colors > hdr["offset"]:
        raise MalformedImage("BMP: palette does not fit before pixel data")
    pal = np.frombuffer(data, dtype=np.uint8, count=4 * n_colors, offset=hdr["palette_at"]).reshape(-1, 4)
    palette = pal[:, 2::-1].copy()
    if hdr["compression"] == BI_RLE8:
        if hdr["top_down"]:
            raise MalformedImage("BMP: RLE8 bitmaps cannot be top-down")
        idx = decode_rle8(data[hdr["offset"]:], w, h)
    elif hdr["compression"] == BI_RGB:
        stride = 4 * (-(-w // 4))
        if hdr["offset"] + stride * h > len(data):
            raise MalformedImage("BMP: pixel data truncated")
        idx = np.frombuffer(data, dtype=np.uint8, count=stride * h, offset=hdr["offset"]).reshape(h, stride)[:, :w]
    else:
        raise MalformedImage(f"BMP: unsupported compression {hdr['compression']} at 8 bpp")
    if not hdr["top_down"]:
        idx = idx[::-1]
    if idx.size and idx.max() >= len(palette):
        raise MalformedImage("BMP: pixel index outside the palette")
    return np.ascontiguousarray(idx), palette


def read_bmp(data: bytes) -> PixelGrid:
    """Decode a 24-bit uncompressed or 8-bit (RLE8/uncompressed) BMP to RGB."""
    hdr = _read_headers(data)
    w, h = hdr["width"], hdr["height"]
    if hdr["bpp"] == 24:
        if hdr["compression"] != BI_RGB:
            raise MalformedImage("BMP: 24-bit data must be uncompressed")
        stride = row_stride_24bpp(w)
        if hdr["offset"] + stride * h > len(data):
            raise MalformedImage("BMP: pixel data truncated")
        rows = np.frombuffer(data, dtype=np.uint8, count=stride * h, offset=hdr["offset"]).reshape(h, stride)
        px = rows[:, :3 * w].reshape(h, w, 3)[:, :, ::-1]
        if not hdr["top_down"]:
            px = px[::-1]
        return PixelGrid(px.copy())
    if hdr["bpp"] == 8:
        idx, palette = _indexed_pixels(data, hdr)
        return PixelGrid(palette[idx])
    raise MalformedImage(f"BMP: unsupported bit depth {hdr['bpp']}")
