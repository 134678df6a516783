"""Center-aligned image and label-map resizing."""

from typing import Tuple

import numpy as np
from scipy import ndimage

from src.errors import ShapeError


def _source_coords(out_extent: int, in_extent: int) -> np.ndarray:
    # pixel centers line up: (dst + 0.5) * in / out - 0.5, clamped to the source
    coords = (np.arange(out_extent, dtype=np.float64) + 0.5) * (in_extent / out_extent) - 0.5
    return np.clip(coords, 0.0, in_extent - 1)


def resize_bilinear(array: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    """Bilinear resize of a [C x H x W] (or [H x W]) array; same size is an exact copy.

    Args:
        array: Channels-first array
        size: Target (h, w)

    Returns:
        Resized array with the input dtype
    """
    h, w = size
    if h < 1 or w < 1:
        raise ShapeError(f"resize target must be positive, got {size}")
    if array.ndim not in (2, 3):
        raise ShapeError(f"resize expects H x W or C x H x W, got {array.shape}")
    if array.shape[-2:] == (h, w):
        return array.copy()
    squeeze = array.ndim == 2
    planes = array[None] if squeeze else array
    H, W = planes.shape[-2:]
    grid = np.meshgrid(_source_coords(h, H), _source_coords(w, W), indexing="ij")
    out = np.stack([ndimage.map_coordinates(plane, grid, order=1, mode="nearest")
                    for plane in planes])
    return out[0] if squeeze else out


def resize_nearest(array: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour resize for label maps ([H x W] or [C x H x W])."""
    h, w = size
    H, W = array.shape[-2:]
    rows = np.minimum(((np.arange(h) + 0.5) * H / h).astype(np.int64), H - 1)
    cols = np.minimum(((np.arange(w) + 0.5) * W / w).astype(np.int64), W - 1)
    return np.ascontiguousarray(array[..., rows[:, None], cols[None, :]])
