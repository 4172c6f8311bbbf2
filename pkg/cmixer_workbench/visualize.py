"""
Grayscale CSI visualization written as binary PGM (P5).

Only the magnitude is drawn; phase is dropped.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .errors import ValidationError
from .storage import atomic_write_bytes
from .utils import get_logger, log_error

MID_GRAY = 128
FLAT_RTOL = 1e-9  # spreads below this fraction of the peak count as constant


@dataclass(frozen=True)
class GrayscaleImage:
    width: int
    height: int
    pixels: np.ndarray  # uint8, [height, width]


def grayscale_image(h, transpose: bool = False,
                    value_range: Optional[Tuple[float, float]] = None) -> GrayscaleImage:
    """
    Map |H| linearly onto 0..255 (min -> 0, max -> 255).

    Rows are antennas and columns subcarriers unless transpose is set.
    value_range fixes the min/max (shared normalization across several images).
    A constant-magnitude matrix renders as mid gray.

    Raises:
        ValidationError: If H has non-finite entries
    """
    h = np.asarray(h)
    if h.ndim != 2:
        raise ValidationError(f"Expected a 2-D CSI matrix, got shape {h.shape}.")
    if not np.all(np.isfinite(h)):
        log_error("grayscale export of a CSI matrix with non-finite entries")
        raise ValidationError("CSI matrix entries must be finite.")
    magnitude = np.abs(h).astype(np.float64)
    if transpose:
        magnitude = magnitude.T
    lo, hi = value_range if value_range is not None else (magnitude.min(), magnitude.max())
    if hi - lo <= FLAT_RTOL * abs(hi):
        get_logger().warning("Constant-magnitude CSI; exporting a mid-gray image")
        pixels = np.full(magnitude.shape, MID_GRAY, dtype=np.uint8)
    else:
        scaled = np.clip((magnitude - lo) / (hi - lo), 0.0, 1.0)
        pixels = np.floor(scaled * 255.0 + 0.5).astype(np.uint8)
    return GrayscaleImage(width=pixels.shape[1], height=pixels.shape[0], pixels=pixels)


def encode_pgm(image: GrayscaleImage) -> bytes:
    header = f"P5\n{image.width} {image.height}\n255\n".encode('ascii')
    return header + np.ascontiguousarray(image.pixels, dtype=np.uint8).tobytes()


def export_grayscale(h, path, transpose: bool = False,
                     value_range: Optional[Tuple[float, float]] = None) -> GrayscaleImage:
    """Render |H| and write it to path as a P5 PGM file."""
    image = grayscale_image(h, transpose=transpose, value_range=value_range)
    atomic_write_bytes(path, encode_pgm(image))
    get_logger().info(f"Exported {image.width}x{image.height} grayscale image to {path}")
    return image


def read_pgm(path) -> GrayscaleImage:
    """
    Read a binary PGM written by export_grayscale.

    Raises:
        ValidationError: If the file is not an 8-bit P5 image
    """
    payload = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(payload) and payload[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(payload) and not payload[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValidationError(f"{path}: truncated PGM header.")
        tokens.append(payload[start:pos])
    pos += 1  # single whitespace after maxval
    if tokens[0] != b'P5' or tokens[3] != b'255':
        log_error(f"{path} is not an 8-bit P5 PGM")
        raise ValidationError(f"{path}: not an 8-bit binary PGM.")
    width, height = int(tokens[1]), int(tokens[2])
    raw = payload[pos:pos + width * height]
    if len(raw) != width * height:
        raise ValidationError(f"{path}: truncated PGM pixel data.")
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(height, width).copy()
    return GrayscaleImage(width=width, height=height, pixels=pixels)
