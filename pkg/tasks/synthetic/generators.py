"""Deterministic generators for the segmentation, normals and edge datasets.

Each image ``i`` draws from its own generator derived from (task, seed, i),
so datasets are pure functions of their parameters and any index range can
be produced independently.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from src.errors import ContractError
from src.heads.losses import IGNORE_LABEL
from tasks.synthetic.dataset import SyntheticDataset
from tasks.synthetic.scenes import class_palette, render_scene, transition_mask
from utils.math.rng import DATA, RngStreams

logger = logging.getLogger(__name__)

SEGMENTATION = "segmentation"
NORMALS = "normals"
EDGES = "edges"

PIXEL_NOISE = 0.05
COLOR_JITTER = 0.04
SHADING_NOISE = 0.01

# Directional lights used to shade height fields; all tilted 45 degrees
LIGHTS = np.array([
    [1.0, 0.0, 1.0],
    [-0.5, np.sqrt(3) / 2, 1.0],
    [-0.5, -np.sqrt(3) / 2, 1.0],
]) / np.sqrt(2)


def _check_size(size: int) -> None:
    if size < 16 or size & (size - 1):
        raise ContractError(f"image size must be a power of 2 >= 16, got {size}")


def _image_rng(generator: str, seed: int, index: int) -> np.random.Generator:
    return RngStreams(seed).get(f"{DATA}:{generator}", index)


# ---------------------------------------------------------------------------
# segmentation
# ---------------------------------------------------------------------------

def segmentation_item(seed: int, index: int, size: int = 32,
                      num_classes: int = 4) -> Tuple[np.ndarray, np.ndarray]:
    """One (image, label map) pair; boundary pixels carry the ignore label."""
    rng = _image_rng(SEGMENTATION, seed, index)
    palette = class_palette(num_classes)
    order = rng.permutation(np.arange(1, num_classes))  # bottom to top
    colors = np.vstack([palette[0], palette[order]])
    colors = colors + rng.uniform(-COLOR_JITTER, COLOR_JITTER, colors.shape)
    scene = render_scene(rng, size, colors, extent=(size / 4, size / 2))

    labels = np.concatenate([[0], order])[scene.layers]
    labels[transition_mask(scene.layers)] = IGNORE_LABEL
    image = scene.image + rng.normal(0.0, PIXEL_NOISE, scene.image.shape)
    return image, labels.astype(np.int64)


def gen_segmentation(seed: int, n_images: int, size: int = 32, num_classes: int = 4,
                     first: int = 0) -> SyntheticDataset:
    """Shapes over a textured background; the label is the topmost shape's class.

    Args:
        seed: Root seed
        n_images: Number of images
        size: Height and width (power of 2, >= 16)
        num_classes: K, including background class 0
        first: Index of the first image (disjoint ranges give disjoint splits)

    Returns:
        SyntheticDataset
    """
    _check_size(size)
    if num_classes < 2:
        raise ContractError(f"segmentation needs K >= 2, got {num_classes}")
    items = [segmentation_item(seed, first + i, size, num_classes) for i in range(n_images)]
    return SyntheticDataset.from_items(
        SEGMENTATION, items, seed, {"size": size, "num_classes": num_classes, "first": first})


# ---------------------------------------------------------------------------
# normals
# ---------------------------------------------------------------------------

@dataclass
class HeightField:
    """z(row, col) = plane + sum of gaussian bumps, in pixel units."""
    slope: Tuple[float, float] = (0.0, 0.0)  # (dz/dcol, dz/drow)
    bumps: List[Tuple[float, float, float, float]] = field(default_factory=list)  # (amp, row, col, sigma)

    @classmethod
    def random(cls, rng: np.random.Generator, size: int, max_terms: int = 8) -> "HeightField":
        """A smooth random field with at most ``max_terms`` terms (one plane + bumps)."""
        slope = tuple(rng.uniform(-0.3, 0.3, 2))
        bumps = []
        for _ in range(int(rng.integers(1, max_terms))):
            sigma = rng.uniform(size / 10, size / 4)
            amp = rng.uniform(-0.8, 0.8) * sigma
            bumps.append((amp, rng.uniform(0, size - 1), rng.uniform(0, size - 1), sigma))
        return cls(slope, bumps)

    def evaluate(self, size: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(z, dz/dcol, dz/drow) on the pixel grid."""
        rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
        z = self.slope[0] * cols + self.slope[1] * rows
        dx = np.full_like(z, self.slope[0])
        dy = np.full_like(z, self.slope[1])
        for amp, r0, c0, sigma in self.bumps:
            g = amp * np.exp(-((rows - r0) ** 2 + (cols - c0) ** 2) / (2 * sigma ** 2))
            z += g
            dx += -g * (cols - c0) / sigma ** 2
            dy += -g * (rows - r0) / sigma ** 2
        return z, dx, dy


def normals_from_gradient(dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Unit normals normalize(-dz/dx, -dz/dy, 1) as a [3 x H x W] map."""
    n = np.stack([-dx, -dy, np.ones_like(dx)])
    return n / np.linalg.norm(n, axis=0, keepdims=True)


def shade(normals: np.ndarray) -> np.ndarray:
    """Lambertian rendering under the three fixed lights, one channel each."""
    return np.maximum(np.einsum("lc,chw->lhw", LIGHTS, normals), 0.0)


def normals_item(seed: int, index: int, size: int = 32) -> Tuple[np.ndarray, np.ndarray]:
    rng = _image_rng(NORMALS, seed, index)
    _, dx, dy = HeightField.random(rng, size).evaluate(size)
    normals = normals_from_gradient(dx, dy)
    image = shade(normals) + rng.normal(0.0, SHADING_NOISE, normals.shape)
    return image, normals


def gen_normals(seed: int, n_images: int, size: int = 32, first: int = 0) -> SyntheticDataset:
    """Shaded renderings of random smooth height fields; targets are the surface normals."""
    _check_size(size)
    items = [normals_item(seed, first + i, size) for i in range(n_images)]
    return SyntheticDataset.from_items(NORMALS, items, seed, {"size": size, "first": first})


# ---------------------------------------------------------------------------
# edges
# ---------------------------------------------------------------------------

def edges_item(seed: int, index: int, size: int = 32,
               pos_rate: float = 0.05) -> Tuple[np.ndarray, np.ndarray]:
    """Scene image plus its occlusion contours (upper side of each layer change)."""
    rng = _image_rng(EDGES, seed, index)
    n_shapes = int(rng.integers(1, 4))
    # a side-s shape has roughly 3.5 s boundary pixels
    side = pos_rate * size * size / (3.5 * n_shapes) + 1.0
    extent = (max(2.0, 0.7 * side), min(size - 2.0, 1.3 * side))
    palette = class_palette(n_shapes + 2)
    colors = np.vstack([palette[0], palette[1 + rng.permutation(n_shapes + 1)[:n_shapes]]])
    scene = render_scene(rng, size, colors, extent=extent)
    image = scene.image + rng.normal(0.0, PIXEL_NOISE, scene.image.shape)
    return image, transition_mask(scene.layers).astype(np.int64)


def gen_edges(seed: int, n_images: int, size: int = 32, pos_rate: float = 0.05,
              first: int = 0) -> SyntheticDataset:
    """Shape scenes labeled 1 exactly on layer-transition pixels (4-connectivity)."""
    _check_size(size)
    if not 0.0 < pos_rate < 1.0:
        raise ContractError(f"pos_rate must be in (0, 1), got {pos_rate}")
    items = [edges_item(seed, first + i, size, pos_rate) for i in range(n_images)]
    dataset = SyntheticDataset.from_items(
        EDGES, items, seed, {"size": size, "pos_rate": pos_rate, "first": first})
    logger.info(f"Generated {n_images} edge images, positive rate {dataset.positive_rate():.4f}")
    return dataset


def generate(kind: str, seed: int, n_images: int, size: int = 32, num_classes: int = 4,
             pos_rate: float = 0.05, first: int = 0) -> SyntheticDataset:
    """Dispatch to the generator for ``kind`` with its relevant parameters."""
    if kind == SEGMENTATION:
        return gen_segmentation(seed, n_images, size, num_classes, first)
    if kind == NORMALS:
        return gen_normals(seed, n_images, size, first)
    if kind == EDGES:
        return gen_edges(seed, n_images, size, pos_rate, first)
    raise ContractError(f"unknown task {kind!r}")


def generate_splits(kind: str, seed: int, train_images: int, heldout_images: int, size: int = 32,
                    num_classes: int = 4,
                    pos_rate: float = 0.05) -> Tuple[SyntheticDataset, SyntheticDataset]:
    """Disjoint train and held-out datasets (held-out images follow the training indices)."""
    train = generate(kind, seed, train_images, size, num_classes, pos_rate)
    heldout = generate(kind, seed, heldout_images, size, num_classes, pos_rate, first=train_images)
    heldout.split = "heldout"
    return train, heldout
