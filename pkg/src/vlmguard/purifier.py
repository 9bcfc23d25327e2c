"""Grayscale masking of a detected patch region."""
from __future__ import annotations

from typing import Iterable

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from .errormap import BlockGrid
from .errors import InvalidInput

DEFAULT_GRAY = 0.5
DEFAULT_DILATION = 1


def block_mask(component: Iterable[tuple[int, int]], grid: BlockGrid, dilation: int = 0) -> np.ndarray:
    """Boolean ``rows x cols`` grid of the component, dilated in 8-connectivity."""
    if dilation < 0:
        raise InvalidInput("dilation must be >= 0")
    blocks = np.zeros(grid.shape, dtype=bool)
    for r, c in component:
        if not (0 <= r < grid.rows and 0 <= c < grid.cols):
            raise InvalidInput(f"block {(r, c)} outside a {grid.rows}x{grid.cols} grid")
        blocks[r, c] = True
    if dilation:
        square = np.ones((2 * dilation + 1, 2 * dilation + 1), dtype=bool)
        blocks = ndimage.binary_dilation(blocks, structure=square)
    return blocks


def build_mask(component, grid: BlockGrid, dilation: int = DEFAULT_DILATION) -> np.ndarray:
    """Pixel mask (``height x width`` bool) covering the component's blocks.

    Dilation is measured in whole blocks and clipped at the image border.
    """
    component = list(component)
    if not component:
        raise InvalidInput("cannot build a mask from an empty component")
    blocks = block_mask(component, grid, dilation)
    up = np.repeat(np.repeat(blocks, grid.block_h, axis=0), grid.block_w, axis=1)
    return up[: grid.height, : grid.width]


def apply_gray_mask(image: np.ndarray, mask: np.ndarray, gray: float = DEFAULT_GRAY) -> np.ndarray:
    """Copy of ``image`` with every masked pixel set to ``gray`` on all channels."""
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if image.ndim == 2:
        image = image[:, :, None]
    if mask.shape != image.shape[:2]:
        raise InvalidInput(f"mask shape {mask.shape} does not match image {image.shape[:2]}")
    if not 0.0 <= gray <= 1.0:
        raise InvalidInput(f"gray must lie in [0, 1], got {gray}")
    out = image.copy()
    out[mask] = gray
    return out


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def save_mask(mask: np.ndarray, path) -> None:
    """Write a pixel mask as a 1-bit PNG."""
    PILImage.fromarray(np.asarray(mask, dtype=bool)).convert("1").save(path, format="PNG")
