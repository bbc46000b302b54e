"""Byte stream <-> RGB pixel grid mapping and global image statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class InvalidWidth(ValueError):
    pass


class MalformedImage(ValueError):
    """Raised by the readers on header, CRC or bounds violations."""


@dataclass(eq=False)
class PixelGrid:
    """A ``height x width`` RGB raster.

    ``pixels`` is a uint8 array of shape (height, width, 3), row-major.
    ``original_length`` is the length of the byte stream the grid encodes;
    anything after it is zero padding. ``tail_pad`` counts the zero bytes
    needed to complete the last pixel (0..2).
    """

    pixels: np.ndarray
    original_length: int | None = None
    tail_pad: int = 0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"pixels must have shape (H>=1, W>=1, 3), got {px.shape}")
        if px.dtype != np.uint8:
            if px.size and (px.min() < 0 or px.max() > 255):
                raise ValueError("pixel channels must lie in [0, 255]")
            px = px.astype(np.uint8)
        self.pixels = np.ascontiguousarray(px)
        if self.original_length is None:
            self.original_length = self.pixels.size

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def size(self) -> int:
        return self.width * self.height

    def __eq__(self, other):
        if not isinstance(other, PixelGrid):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and np.array_equal(self.pixels, other.pixels)

    def __repr__(self):
        return f"PixelGrid({self.width}x{self.height}, original_length={self.original_length})"


def near_square_width(n_bytes: int) -> int:
    n_pixels = -(-n_bytes // 3)
    return math.isqrt(n_pixels - 1) + 1


def bytes_to_grid(stream: bytes, width: int | None = None, **metadata) -> PixelGrid:
    """Pack consecutive byte triples into (R, G, B) pixels, row-major.

    ``width=None`` selects the near-square policy ``ceil(sqrt(ceil(n/3)))``.
    The stream is zero-padded to complete the final pixel and final row.
    """
    n = len(stream)
    if n == 0:
        raise ValueError("cannot image an empty byte stream")
    if width is None:
        width = near_square_width(n)
    elif width < 1:
        raise InvalidWidth(f"width must be >= 1, got {width}")
    n_pixels = -(-n // 3)
    height = -(-n_pixels // width)
    buf = np.zeros(width * height * 3, dtype=np.uint8)
    buf[:n] = np.frombuffer(stream, dtype=np.uint8)
    return PixelGrid(buf.reshape(height, width, 3), original_length=n, tail_pad=(-n) % 3,
                     metadata=dict(metadata))


def grid_to_bytes(grid: PixelGrid) -> bytes:
    """Row-major channel bytes, truncated to the recorded original length."""
    return grid.pixels.tobytes()[:grid.original_length]


@dataclass(frozen=True)
class ImageStats:
    mu: np.ndarray
    sigma: np.ndarray


def compute_stats(grid: PixelGrid) -> ImageStats:
    """Per-channel mean and sample standard deviation (denominator S-1).

    A single-pixel grid has sigma 0 by convention.
    """
    px = grid.pixels.reshape(-1, 3)
    s = px.shape[0]
    # integer channel sums are exact, so the mean is correctly rounded
    mu = px.sum(axis=0, dtype=np.int64) / s
    if s < 2:
        return ImageStats(mu, np.zeros(3))
    dev = px - mu
    sigma = np.sqrt((dev * dev).sum(axis=0) / (s - 1))
    return ImageStats(mu, sigma)
