"""Scene primitives shared by the synthetic generators.

A scene is a textured background with soft-edged rectangles and discs
stacked on top of it. Every pixel's label follows from local image content
(its color), which keeps the tasks learnable.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from matplotlib.colors import hsv_to_rgb
from scipy import ndimage

from src.errors import ContractError

MAX_ATTEMPTS = 100
BACKGROUND_GRAY = 0.45
TEXTURE_AMPLITUDE = 0.06


@dataclass
class Shape:
    """An axis-aligned rectangle or a disc, in pixel coordinates."""
    kind: str  # "rect" or "disc"
    center: Tuple[float, float]  # (row, col)
    half_extent: Tuple[float, float]  # (half height, half width); discs use the first as radius

    def signed_distance(self, size: int) -> np.ndarray:
        """Negative inside, positive outside, in pixels."""
        rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
        dr, dc = rows - self.center[0], cols - self.center[1]
        if self.kind == "disc":
            return np.hypot(dr, dc) - self.half_extent[0]
        return np.maximum(np.abs(dr) - self.half_extent[0], np.abs(dc) - self.half_extent[1])


@dataclass
class Scene:
    """Rendered scene: RGB image plus the layer each pixel shows (0 = background)."""
    image: np.ndarray  # 3 x H x W
    layers: np.ndarray  # H x W int64, index into ``shapes`` + 1
    shapes: List[Shape]


def class_palette(num_classes: int) -> np.ndarray:
    """RGB color per class: gray background, evenly spaced saturated hues for the rest."""
    colors = np.empty((num_classes, 3))
    colors[0] = BACKGROUND_GRAY
    hues = np.arange(num_classes - 1) / max(num_classes - 1, 1)
    colors[1:] = hsv_to_rgb(np.stack([hues, np.full_like(hues, 0.8), np.full_like(hues, 0.9)], axis=1))
    return colors


def texture(rng: np.random.Generator, size: int) -> np.ndarray:
    """Smooth zero-mean noise in [-1, 1] per channel."""
    noise = ndimage.gaussian_filter(rng.standard_normal((3, size, size)), sigma=(0, 1.5, 1.5))
    peak = np.abs(noise).max()
    return noise / peak if peak > 0 else noise


def random_shape(rng: np.random.Generator, size: int, extent: Tuple[float, float]) -> Shape:
    """A shape with side (or diameter) drawn from ``extent`` that fits inside the image."""
    kind = "rect" if rng.random() < 0.5 else "disc"
    if kind == "disc":
        r = rng.uniform(*extent) / 2
        half = (r, r)
    else:
        half = (rng.uniform(*extent) / 2, rng.uniform(*extent) / 2)
    center = (rng.uniform(half[0], size - 1 - half[0]), rng.uniform(half[1], size - 1 - half[1]))
    return Shape(kind, center, half)


def render_scene(rng: np.random.Generator, size: int, colors: np.ndarray,
                 extent: Tuple[float, float], min_visible: int = 4,
                 background: Optional[np.ndarray] = None) -> Scene:
    """Stack one shape per color (after the first, which is the background).

    Shapes are retried until each keeps at least ``min_visible`` pixels after
    occlusion.

    Args:
        rng: Per-image generator
        size: Image height and width
        colors: [L x 3] background color then one color per shape, bottom to top
        extent: (min, max) shape side or diameter in pixels
        min_visible: Smallest visible area of every shape
        background: Optional background texture override [3 x H x W]

    Returns:
        Scene
    """
    if extent[1] > size - 1:
        raise ContractError(f"shapes of {extent[1]} pixels cannot fit a {size}x{size} image")
    tex = texture(rng, size) if background is None else background
    for _ in range(MAX_ATTEMPTS):
        shapes = [random_shape(rng, size, extent) for _ in range(len(colors) - 1)]
        distances = [s.signed_distance(size) for s in shapes]
        layers = np.zeros((size, size), dtype=np.int64)
        for k, d in enumerate(distances, start=1):
            layers[d < 0] = k
        if all((layers == k).sum() >= min_visible for k in range(1, len(shapes) + 1)):
            break
    else:
        raise ContractError(f"could not place {len(colors) - 1} visible shapes "
                            f"after {MAX_ATTEMPTS} attempts")

    image = colors[0][:, None, None] + TEXTURE_AMPLITUDE * tex
    for k, d in enumerate(distances, start=1):
        alpha = np.clip(0.5 - d, 0.0, 1.0)  # one-pixel soft edge
        image = image * (1 - alpha) + colors[k][:, None, None] * alpha
    return Scene(image=image, layers=layers, shapes=shapes)


def transition_mask(labels: np.ndarray) -> np.ndarray:
    """Pixels with a 4-neighbour of a lower label (the upper side of each boundary).

    Marks exactly one pixel across every label change, on the side of the
    higher (occluding) label.
    """
    labels = np.asarray(labels)
    mask = np.zeros(labels.shape, dtype=bool)
    mask[1:, :] |= labels[:-1, :] < labels[1:, :]
    mask[:-1, :] |= labels[1:, :] < labels[:-1, :]
    mask[:, 1:] |= labels[:, :-1] < labels[:, 1:]
    mask[:, :-1] |= labels[:, 1:] < labels[:, :-1]
    return mask
