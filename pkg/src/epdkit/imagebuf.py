"""Image buffer conventions and PNG I/O.

An image buffer is a float array of shape (H, W, 3) with components in [0, 1],
row-major, RGB. Files are 8-bit RGB PNG; write conversion is value*255 with
round-half-away-from-zero, read conversion is value/255.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

MIN_SIDE = 8


class ImageError(ValueError):
    pass


def validate_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImageError(f"expected (H, W, 3) image, got shape {img.shape}")
    if img.shape[0] < MIN_SIDE or img.shape[1] < MIN_SIDE:
        raise ImageError(f"image sides must be >= {MIN_SIDE}, got {img.shape[:2]}")
    if not np.issubdtype(img.dtype, np.floating):
        raise ImageError(f"expected float image data, got dtype {img.dtype}")
    if not np.isfinite(img).all():
        raise ImageError("image contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ImageError("image components must lie in [0, 1]")
    return img


def clamp01(img: np.ndarray) -> np.ndarray:
    return np.clip(img, 0.0, 1.0)


def to_uint8(img: np.ndarray) -> np.ndarray:
    """[0,1] floats to uint8, rounding half away from zero."""
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def from_uint8(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float64) / 255.0


def save_png(img: np.ndarray, path) -> None:
    validate_image(img)
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG")


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"))
    return from_uint8(arr)
