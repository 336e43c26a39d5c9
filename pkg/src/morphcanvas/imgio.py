"""PNG helpers around Pillow plus a dependency-free header peek."""

from __future__ import annotations

import io
import struct

import numpy as np
from PIL import Image

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def png_dimensions(data: bytes) -> tuple[int, int]:
    """Read (width, height) from a PNG IHDR without decoding pixels.

    Raises ValueError on anything that is not a plausible PNG. Safe on
    arbitrary bytes.
    """
    if len(data) < 24 or data[:8] != PNG_SIGNATURE:
        raise ValueError("missing PNG signature")
    length, chunk = struct.unpack_from(">I4s", data, 8)
    if chunk != b"IHDR" or length < 8:
        raise ValueError("first chunk is not IHDR")
    width, height = struct.unpack_from(">II", data, 16)
    if width == 0 or height == 0:
        raise ValueError("zero PNG dimensions")
    return width, height


def encode_png(pixels: np.ndarray, compress_level: int = 1) -> bytes:
    """Encode an (H, W, 3) uint8 RGB or (H, W) uint8 gray array as PNG."""
    buf = io.BytesIO()
    Image.fromarray(pixels).save(buf, format="PNG", compress_level=compress_level)
    return buf.getvalue()


def decode_png_rgb(data: bytes) -> np.ndarray:
    """Decode PNG bytes to an (H, W, 3) uint8 array."""
    with Image.open(io.BytesIO(data)) as img:
        return np.asarray(img.convert("RGB"))


def decode_png_gray(data: bytes) -> np.ndarray:
    """Decode PNG bytes to an (H, W) uint8 array."""
    with Image.open(io.BytesIO(data)) as img:
        return np.asarray(img.convert("L"))


def load_canvas(path) -> np.ndarray:
    """Load the pristine canvas image as (H, W, 3) uint8."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB")).copy()


def resize_rgb(pixels: np.ndarray, width: int, height: int) -> np.ndarray:
    """Deterministic bilinear resize of an RGB array."""
    img = Image.fromarray(pixels).resize((width, height), Image.BILINEAR)
    return np.asarray(img)


def resize_mask(mask: np.ndarray, width: int, height: int) -> np.ndarray:
    """Resize a {0,1} uint8 mask with nearest neighbour, preserving binarity."""
    img = Image.fromarray(mask * np.uint8(255)).resize((width, height), Image.NEAREST)
    return (np.asarray(img) > 127).astype(np.uint8)
