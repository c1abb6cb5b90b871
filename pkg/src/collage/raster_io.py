"""PNG load/save helpers (Pillow behind a tiny deterministic facade)."""

from __future__ import annotations

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ParseError


def load_gray(path: str) -> np.ndarray:
    """Read an image as float grayscale in [0, 1] (0 = black)."""
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("L"), dtype=np.float64)
    except (UnidentifiedImageError, OSError) as e:
        raise ParseError(f"cannot read image {path}: {e}") from e
    return arr / 255.0

def load_mask(path: str, threshold: float = 0.5) -> np.ndarray:
    """Read an image as a boolean mask: True where darker than threshold."""
    return load_gray(path) < threshold


def save_gray(path: str, arr: np.ndarray) -> None:
    """Write a float [0, 1] array as 8-bit grayscale PNG."""
    data = np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(data * 255.0).astype(np.uint8), mode="L").save(path)


def save_color(path: str, arr: np.ndarray) -> None:
    """Write a float [0, 1] (H, W, 3) array as 8-bit RGB PNG."""
    data = np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(data * 255.0).astype(np.uint8), mode="RGB").save(path)
