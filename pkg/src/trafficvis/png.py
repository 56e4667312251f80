"""Minimal deterministic PNG writer for class images.

Output is 8-bit RGB, non-interlaced, every scanline uses filter type 0 and
the IDAT stream is zlib level 9, so identical images give identical bytes.
"""
import struct
import zlib

import numpy as np

from .byteclass import PALETTE

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
COMPRESSION_LEVEL = 9


def _chunk(tag: bytes, payload: bytes) -> bytes:
    crc = zlib.crc32(tag + payload) & 0xFFFFFFFF
    return struct.pack(">I", len(payload)) + tag + payload + struct.pack(">I", crc)


def to_rgb(img, scale: int = 1) -> np.ndarray:
    """RGB array of shape (side*scale, side*scale, 3)."""
    if scale < 1:
        raise ValueError("scale must be >= 1")
    rgb = PALETTE[img.cells]
    if scale > 1:
        rgb = rgb.repeat(scale, axis=0).repeat(scale, axis=1)
    return rgb


def encode_png(rgb: np.ndarray) -> bytes:
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    height, width, _ = rgb.shape
    ihdr = struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0)
    raw = np.zeros((height, width * 3 + 1), dtype=np.uint8)
    raw[:, 1:] = rgb.reshape(height, width * 3)
    idat = zlib.compress(raw.tobytes(), COMPRESSION_LEVEL)
    return PNG_SIGNATURE + _chunk(b"IHDR", ihdr) + _chunk(b"IDAT", idat) + _chunk(b"IEND", b"")


def emit_png(img, scale: int = 1) -> bytes:
    """Render a VisImage as PNG bytes, each cell a ``scale`` x ``scale`` block."""
    return encode_png(to_rgb(img, scale))
