"""Pixel sampling strategies and mini-batch construction."""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from src.errors import ContractError

logger = logging.getLogger(__name__)

UNIFORM = "uniform"
BIASED = "biased"
STRATEGIES = (UNIFORM, BIASED)


def _flat_to_coords(flat: np.ndarray, width: int) -> np.ndarray:
    rows, cols = np.divmod(flat.astype(np.int64), width)
    return np.stack([rows, cols], axis=1)


def sample_pixels_uniform(image_size: Tuple[int, int], n: int,
                          rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` distinct pixels uniformly without replacement.

    Args:
        image_size: (H, W)
        n: Number of pixels (<= H * W)
        rng: Generator; the same seed yields the same pixels

    Returns:
        Int array [n x 2] of (row, col)
    """
    H, W = image_size
    if n < 0 or n > H * W:
        raise ContractError(f"cannot draw {n} distinct pixels from {H}x{W}")
    return _flat_to_coords(rng.choice(H * W, size=n, replace=False), W)


def positive_quota(n: int, rho: float) -> int:
    """ceil(rho * n), robust to representation error in rho."""
    return int(math.ceil(round(rho * n, 9)))


def sample_pixels_biased(labels: np.ndarray, n: int, rho: float,
                         rng: np.random.Generator) -> np.ndarray:
    """Draw ceil(rho * n) pixels from positives and the rest from negatives.

    When a class pool is smaller than its quota, the shortfall is refilled
    from the other pool.

    Args:
        labels: [H x W] binary map
        n: Total pixels
        rho: Fraction of positives in [0, 1]
        rng: Generator

    Returns:
        Int array [n x 2] of (row, col), positives first
    """
    if not 0.0 <= rho <= 1.0:
        raise ContractError(f"rho must be in [0, 1], got {rho}")
    labels = np.asarray(labels)
    H, W = labels.shape
    if n < 0 or n > H * W:
        raise ContractError(f"cannot draw {n} distinct pixels from {H}x{W}")
    flat = labels.reshape(-1)
    pos_pool = np.flatnonzero(flat == 1)
    neg_pool = np.flatnonzero(flat != 1)

    n_pos = min(positive_quota(n, rho), len(pos_pool))
    n_neg = n - n_pos
    if n_neg > len(neg_pool):
        n_neg = len(neg_pool)
        n_pos = n - n_neg
    if n_pos != positive_quota(n, rho):
        logger.debug(f"biased sampling shortfall: wanted {positive_quota(n, rho)} positives, "
                     f"drew {n_pos} (pools {len(pos_pool)}/{len(neg_pool)})")

    picked = np.concatenate([
        rng.choice(pos_pool, size=n_pos, replace=False) if n_pos else np.empty(0, np.int64),
        rng.choice(neg_pool, size=n_neg, replace=False) if n_neg else np.empty(0, np.int64),
    ])
    return _flat_to_coords(picked, W)


@dataclass
class PixelBatch:
    """The sampled pixel set of one SGD step.

    ``image_index`` addresses a slot in ``images`` (0..M-1); ``source_index``
    maps slots back to dataset items.
    """
    image_index: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    targets: np.ndarray
    images_per_batch: int
    pixels_per_image: int
    source_index: np.ndarray
    images: List[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return int(len(self.rows))

    def slot(self, m: int) -> np.ndarray:
        """Entry positions belonging to image slot ``m``."""
        return np.flatnonzero(self.image_index == m)

    def to_frame(self) -> pd.DataFrame:
        """Audit table: image_index, row, col and target column(s)."""
        frame = pd.DataFrame({
            "image_index": self.source_index[self.image_index],
            "row": self.rows,
            "col": self.cols,
        })
        if self.targets.ndim == 1:
            frame["target"] = self.targets
        else:
            for k in range(self.targets.shape[1]):
                frame[f"target_{k}"] = self.targets[:, k]
        return frame

    def dump_csv(self, path: Union[str, Path]) -> None:
        self.to_frame().to_csv(path, index=False)


ImageView = Callable[[int, np.random.Generator], Tuple[np.ndarray, np.ndarray]]


def build_batch(dataset, M: int, N: int, strategy: str, rng: np.random.Generator,
                rho: float = 0.5, view: Optional[ImageView] = None) -> PixelBatch:
    """Pick M images without replacement and N pixels from each.

    Args:
        dataset: Object with ``__len__`` and ``item(i) -> (image, target_map)``
        M: Images per batch
        N: Pixels per image
        strategy: ``"uniform"`` or ``"biased"`` (binary targets only)
        rng: Generator driving image and pixel choice
        rho: Positive fraction for biased sampling
        view: Optional ``(index, rng) -> (image, target_map)`` override used
            for training-time resizing

    Returns:
        PixelBatch with M*N entries, grouped by image slot
    """
    if strategy not in STRATEGIES:
        raise ContractError(f"unknown sampling strategy {strategy!r}")
    if M < 1 or M > len(dataset):
        raise ContractError(f"cannot draw {M} distinct images from {len(dataset)}")
    if N < 1:
        raise ContractError(f"pixels per image must be >= 1, got {N}")
    chosen = rng.choice(len(dataset), size=M, replace=False)

    slots, rows, cols, targets, images = [], [], [], [], []
    for m, idx in enumerate(chosen):
        image, target = view(int(idx), rng) if view is not None else dataset.item(int(idx))
        H, W = image.shape[-2:]
        if N > H * W:
            raise ContractError(f"N={N} exceeds the {H * W} pixels of image {idx}")
        if strategy == BIASED:
            coords = sample_pixels_biased(target, N, rho, rng)
        else:
            coords = sample_pixels_uniform((H, W), N, rng)
        slots.append(np.full(N, m, dtype=np.int64))
        rows.append(coords[:, 0])
        cols.append(coords[:, 1])
        if target.ndim == 3:  # vector targets stored channel-first
            targets.append(target[:, coords[:, 0], coords[:, 1]].T)
        else:
            targets.append(target[coords[:, 0], coords[:, 1]])
        images.append(image)

    return PixelBatch(
        image_index=np.concatenate(slots),
        rows=np.concatenate(rows),
        cols=np.concatenate(cols),
        targets=np.concatenate(targets),
        images_per_batch=M,
        pixels_per_image=N,
        source_index=np.asarray(chosen, dtype=np.int64),
        images=images,
    )
