"""On-demand hypercolumn extraction by bilinear interpolation.

Only the requested pixels are interpolated: the cost is O(|P| * D), never
O(H * W * D). The dense path enumerates every pixel through the same code,
so a dense row and a sampled row for the same pixel agree bit for bit.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from src.autodiff.graph import apply_op
from src.autodiff.tensor import Tensor
from src.errors import ContractError, ResourceError, ShapeError
from src.layers.backbone import FeatureMapSet, LayerMeta

logger = logging.getLogger(__name__)

# Upper bound on H * W * D scalars materialized by dense_hypercolumn
DEFAULT_BUDGET_SCALARS = 1 << 26


class PixelCoord(NamedTuple):
    """A pixel in original image resolution."""
    row: int
    col: int


@dataclass
class TapProvenance:
    """Where each sampled row's slice of one tap came from."""
    name: str
    channels: int
    fmap_shape: Tuple[int, int, int, int]  # B x C x H_i x W_i
    indices: np.ndarray  # [P x 4] flat cell indices into the B*H_i*W_i grid
    weights: np.ndarray  # [P x 4] bilinear weights, non-negative, summing to 1


@dataclass
class HypercolumnMatrix:
    """Sampled hypercolumns plus the bookkeeping needed for backward.

    Columns are the concatenation of taps in tap order (see :meth:`columns`).
    """
    features: Tensor  # [P x D]
    taps: List[TapProvenance]
    image_index: np.ndarray
    rows: np.ndarray
    cols: np.ndarray

    def columns(self) -> List[Tuple[str, int, int]]:
        """(tap name, first column, end column) for every tap."""
        spans, start = [], 0
        for tap in self.taps:
            spans.append((tap.name, start, start + tap.channels))
            start += tap.channels
        return spans


def feature_coords(p: PixelCoord, meta: LayerMeta, image_size: Tuple[int, int]) -> Tuple[float, float]:
    """Map a pixel to fractional feature-map coordinates.

    Uses center alignment, u = (row + 0.5) / s - 0.5, clamped to the map, so a
    stride-1 tap is the identity.

    Args:
        p: Pixel in image coordinates
        meta: Tap geometry
        image_size: (H, W) of the input image

    Returns:
        (u, v) in feature-map cells
    """
    H, W = image_size
    if not (0 <= p.row < H and 0 <= p.col < W):
        raise ContractError(f"pixel {tuple(p)} outside image {H}x{W}")
    u, v = _map_coords(np.array([p.row]), np.array([p.col]), meta.stride_product,
                       H // meta.stride_product, W // meta.stride_product)
    return float(u[0]), float(v[0])


def _map_coords(rows: np.ndarray, cols: np.ndarray, s: int, h_i: int, w_i: int):
    u = (rows + 0.5) / s - 0.5
    v = (cols + 0.5) / s - 0.5
    return np.clip(u, 0.0, h_i - 1), np.clip(v, 0.0, w_i - 1)


def _bilinear_plan(image_index: np.ndarray, rows: np.ndarray, cols: np.ndarray,
                   meta: LayerMeta, fmap_shape: Tuple[int, ...]) -> Tuple[np.ndarray, np.ndarray]:
    """Four source cells and weights per pixel for one tap."""
    _, _, h_i, w_i = fmap_shape
    u, v = _map_coords(rows, cols, meta.stride_product, h_i, w_i)
    u0 = np.floor(u).astype(np.int64)
    v0 = np.floor(v).astype(np.int64)
    u1 = np.minimum(u0 + 1, h_i - 1)
    v1 = np.minimum(v0 + 1, w_i - 1)
    a = u - u0
    b = v - v0
    base = image_index.astype(np.int64) * (h_i * w_i)
    indices = np.stack([base + u0 * w_i + v0, base + u0 * w_i + v1,
                        base + u1 * w_i + v0, base + u1 * w_i + v1], axis=1)
    weights = np.stack([(1 - a) * (1 - b), (1 - a) * b, a * (1 - b), a * b], axis=1)
    return indices, weights


def _cells(fmap: np.ndarray) -> np.ndarray:
    """[B x C x H x W] -> [B*H*W x C]."""
    B, C, H, W = fmap.shape
    return np.ascontiguousarray(fmap.transpose(0, 2, 3, 1)).reshape(B * H * W, C)


def _interpolate(cells: np.ndarray, indices: np.ndarray, weights: np.ndarray) -> np.ndarray:
    w = weights.astype(cells.dtype)
    return (cells[indices[:, 0]] * w[:, 0:1] + cells[indices[:, 1]] * w[:, 1:2]
            + cells[indices[:, 2]] * w[:, 2:3] + cells[indices[:, 3]] * w[:, 3:4])


def _image_size(fmaps: FeatureMapSet, metas: Sequence[LayerMeta]) -> Tuple[int, int]:
    first = fmaps[metas[0].name]
    return first.shape[2] * metas[0].stride_product, first.shape[3] * metas[0].stride_product


def sample_hypercolumn(fmaps: FeatureMapSet, metas: Sequence[LayerMeta],
                       image_index: np.ndarray, rows: np.ndarray, cols: np.ndarray,
                       image_size: Optional[Tuple[int, int]] = None) -> HypercolumnMatrix:
    """Interpolate hypercolumns at the requested pixels.

    Args:
        fmaps: Tap name -> feature map, all from one backbone forward
        metas: Tap metadata in column order
        image_index: [P] batch index of each pixel
        rows: [P] pixel rows in image resolution
        cols: [P] pixel columns in image resolution
        image_size: (H, W); derived from the first tap when omitted

    Returns:
        HypercolumnMatrix whose features are differentiable w.r.t. the maps
    """
    image_index = np.asarray(image_index, dtype=np.int64).reshape(-1)
    rows = np.asarray(rows, dtype=np.int64).reshape(-1)
    cols = np.asarray(cols, dtype=np.int64).reshape(-1)
    if not (len(image_index) == len(rows) == len(cols)):
        raise ContractError("image_index, rows and cols must have equal length")
    if not metas:
        raise ContractError("at least one tap is required")
    H, W = image_size or _image_size(fmaps, metas)
    batch = fmaps[metas[0].name].shape[0]
    if len(rows) and (rows.min() < 0 or rows.max() >= H or cols.min() < 0 or cols.max() >= W
                      or image_index.min() < 0 or image_index.max() >= batch):
        raise ContractError(f"pixel outside the {batch} x {H}x{W} input")

    taps, parts, inputs = [], [], []
    for meta in metas:
        fmap = fmaps.get(meta.name)
        if fmap is None:
            raise ContractError(f"feature map {meta.name!r} missing")
        if fmap.shape[1] != meta.channels:
            raise ShapeError(f"{meta.name}: {fmap.shape[1]} channels, metadata says {meta.channels}")
        indices, weights = _bilinear_plan(image_index, rows, cols, meta, fmap.shape)
        parts.append(_interpolate(_cells(fmap.data), indices, weights))
        taps.append(TapProvenance(meta.name, meta.channels, tuple(fmap.shape), indices, weights))
        inputs.append(fmap)

    out = np.concatenate(parts, axis=1) if len(parts) > 1 else parts[0]

    def backward(g):
        grads = scatter_gradient(g, taps)
        return tuple(grads[t.name] for t in taps)

    features = apply_op("hypercolumn", inputs, np.ascontiguousarray(out), backward)
    return HypercolumnMatrix(features, taps, image_index, rows, cols)


def scatter_gradient(grad: np.ndarray, provenance: Sequence[TapProvenance]) -> Dict[str, np.ndarray]:
    """Distribute hypercolumn gradients back onto the source feature cells.

    Each row's slice for a tap goes to its four source cells with the recorded
    weights, accumulated additively across rows.

    Args:
        grad: [P x D] upstream gradient
        provenance: Tap bookkeeping from the matching sample_hypercolumn call

    Returns:
        Tap name -> gradient shaped like the tap's feature map
    """
    grad = np.asarray(grad)
    expected = sum(t.channels for t in provenance)
    if grad.ndim != 2 or grad.shape[1] != expected:
        raise ContractError(f"gradient shape {grad.shape} does not match D={expected}")
    out: Dict[str, np.ndarray] = {}
    start = 0
    for tap in provenance:
        if tap.indices.shape[0] != grad.shape[0]:
            raise ContractError(f"{tap.name}: provenance has {tap.indices.shape[0]} rows, "
                                f"gradient has {grad.shape[0]}")
        B, C, H, W = tap.fmap_shape
        g = grad[:, start:start + C]
        cells = np.zeros((B * H * W, C), dtype=grad.dtype)
        w = tap.weights.astype(grad.dtype)
        for k in range(4):
            np.add.at(cells, tap.indices[:, k], g * w[:, k:k + 1])
        out[tap.name] = np.ascontiguousarray(cells.reshape(B, H, W, C).transpose(0, 3, 1, 2))
        start += C
    return out


def dense_hypercolumn(fmaps: FeatureMapSet, metas: Sequence[LayerMeta], out_size: Tuple[int, int],
                      image_index: int = 0,
                      budget: Optional[int] = DEFAULT_BUDGET_SCALARS) -> Tensor:
    """Hypercolumns for every pixel of one image, in row-major pixel order.

    Args:
        fmaps: Tap feature maps
        metas: Tap metadata in column order
        out_size: (H, W) of the image
        image_index: Which batch entry to enumerate
        budget: Maximum H * W * D scalars (None for no limit)

    Returns:
        Tensor [H*W x D]
    """
    H, W = out_size
    D = sum(m.channels for m in metas)
    required = H * W * D
    if budget is not None and required > budget:
        raise ResourceError("dense hypercolumn exceeds the memory budget", required, budget)
    rows, cols = np.divmod(np.arange(H * W, dtype=np.int64), W)
    index = np.full(H * W, image_index, dtype=np.int64)
    return sample_hypercolumn(fmaps, metas, index, rows, cols, image_size=(H, W)).features
