"""8-bit grayscale PNG helpers used by every stage of the pipeline."""

from __future__ import annotations

import os

import numpy as np
from PIL import Image


def read_gray(path: str | os.PathLike) -> np.ndarray:
    """Read a PNG as an (H, W) uint8 array, converting to grayscale if needed."""
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8)


def write_gray(path: str | os.PathLike, image: np.ndarray, rgb: bool = False) -> None:
    """Write an (H, W) uint8 array; rgb=True replicates the channel to RGB."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"expected 2-d grayscale array, got shape {image.shape}")
    im = Image.fromarray(image.astype(np.uint8), mode="L")
    if rgb:
        im = im.convert("RGB")
    im.save(path, format="PNG")


def read_mask(path: str | os.PathLike) -> np.ndarray:
    """Read a 0/255 mask PNG as a binary (H, W) uint8 array of {0, 1}."""
    return (read_gray(path) > 127).astype(np.uint8)


def write_mask(path: str | os.PathLike, mask: np.ndarray) -> None:
    """Write a binary mask as a 0/255 grayscale PNG."""
    mask = np.asarray(mask)
    write_gray(path, np.where(mask > 0, 255, 0).astype(np.uint8))
