"""Byte-stream imaging: pixel grids, statistics, BMP and PNG codecs."""

from .bmp import (
    decode_rle8,
    encode_rle8,
    luminance_index,
    read_bmp,
    read_bmp_indexed,
    row_stride_24bpp,
    write_bmp8_rle,
    write_bmp24,
)
from .grid import (
    ImageStats,
    InvalidWidth,
    MalformedImage,
    PixelGrid,
    bytes_to_grid,
    compute_stats,
    grid_to_bytes,
    near_square_width,
)
from .png import read_png, write_png

WRITERS = {"bmp24": write_bmp24, "bmp8rle": write_bmp8_rle, "png": write_png}
EXTENSIONS = {"bmp24": ".bmp", "bmp8rle": ".bmp", "png": ".png"}


def read_image(data: bytes) -> PixelGrid:
    """Dispatch to the BMP or PNG reader by file signature."""
    if data[:2] == b"BM":
        return read_bmp(data)
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        return read_png(data)
    raise MalformedImage("unrecognised image signature")


__all__ = [
    "EXTENSIONS", "ImageStats", "InvalidWidth", "MalformedImage", "PixelGrid", "WRITERS",
    "bytes_to_grid", "compute_stats", "decode_rle8", "encode_rle8", "grid_to_bytes", "luminance_index",
    "near_square_width", "read_bmp", "read_bmp_indexed", "read_image", "read_png", "row_stride_24bpp",
    "write_bmp24", "write_bmp8_rle", "write_png",
]
