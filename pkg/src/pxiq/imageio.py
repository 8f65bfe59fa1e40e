"""8-bit PNG/PPM image I/O; arrays travel as float HxWx3 in [0, 1]."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

__all__ = ["load_image", "save_image", "to_nchw", "from_nchw"]

_SUPPORTED = {".png", ".ppm"}


def load_image(path: str | Path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() not in _SUPPORTED:
        raise ValueError(f"{path}: unsupported image format (need PNG or PPM)")
    with Image.open(path) as im:
        rgb = im.convert("RGB")
        return np.asarray(rgb, dtype=np.float32) / 255.0


def save_image(path: str | Path, image01: np.ndarray):
    path = Path(path)
    if path.suffix.lower() not in _SUPPORTED:
        raise ValueError(f"{path}: unsupported image format (need PNG or PPM)")
    arr = np.clip(np.asarray(image01), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path)


def to_nchw(image01: np.ndarray) -> np.ndarray:
    """HxWx3 [0,1] -> 1x3xHxW float32 batch."""
    return np.ascontiguousarray(image01.transpose(2, 0, 1)[None]).astype(np.float32)


def from_nchw(batch: np.ndarray) -> np.ndarray:
    """1x3xHxW -> HxWx3, clipped to [0, 1]."""
    return np.clip(batch[0].transpose(1, 2, 0), 0.0, 1.0)
