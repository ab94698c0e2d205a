"""PNG reading/writing: 8-bit RGB images and single-channel binary masks."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image

MASK_THRESHOLD = 128


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Load an 8-bit RGB PNG as an HxWx3 float array in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_image(path: str | os.PathLike, rgb: np.ndarray) -> None:
    """Write an HxWx3 float [0, 1] array as an 8-bit RGB PNG."""
    arr = np.clip(np.asarray(rgb), 0.0, 1.0)
    Image.fromarray(np.rint(arr * 255.0).astype(np.uint8), mode="RGB").save(path)


def load_mask_array(path: str | os.PathLike) -> np.ndarray:
    """Load a single-channel PNG as an HxW uint8 {0,1} array (threshold 128)."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return (arr >= MASK_THRESHOLD).astype(np.uint8)


def save_mask_array(path: str | os.PathLike, values: np.ndarray) -> None:
    """Write an HxW {0,1} array as a single-channel PNG (0 / 255)."""
    arr = (np.asarray(values) > 0).astype(np.uint8) * 255
    Image.fromarray(arr, mode="L").save(path)


def png_names(directory: str | os.PathLike) -> list[str]:
    """Sorted PNG filenames (without directory) in `directory`."""
    return sorted(p.name for p in Path(directory).glob("*.png"))
