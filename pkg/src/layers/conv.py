"""Convolution and max-pooling layers."""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.autodiff.graph import apply_op
from src.autodiff.tensor import Tensor
from src.errors import ShapeError


@dataclass
class Conv2dParams:
    """Weights of one convolution.

    Kernels are odd-sized so "same" padding, pad = (k - 1) / 2, is exact.
    """
    weights: Tensor  # [out_ch, in_ch, kh, kw]
    bias: Tensor     # [out_ch]
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ShapeError(f"conv weights must be 4-D, got {self.weights.shape}")
        out_ch, _, kh, kw = self.weights.shape
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError(f"conv kernels must be odd, got {kh}x{kw}")
        if self.bias.shape != (out_ch,):
            raise ShapeError(f"bias shape {self.bias.shape} does not match {out_ch} outputs")
        if self.stride < 1 or self.pad < 0:
            raise ShapeError(f"invalid stride {self.stride} / pad {self.pad}")


def _output_extent(size: int, k: int, pad: int, stride: int) -> int:
    span = size + 2 * pad - k
    if span < 0 or span % stride != 0:
        raise ShapeError(
            f"extent {size} with kernel {k}, pad {pad}, stride {stride} is not integral"
        )
    return span // stride + 1


def conv2d(x: Tensor, params: Conv2dParams) -> Tensor:
    """Cross-correlate a [B x C x H x W] input with the layer's kernels.

    Args:
        x: Input batch
        params: Weights, bias, stride and zero padding

    Returns:
        Tensor [B x out_ch x H' x W'], H' = (H + 2 pad - kh) / stride + 1
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be B x C x H x W, got {x.shape}")
    w, b = params.weights, params.bias
    out_ch, in_ch, kh, kw = w.shape
    if x.shape[1] != in_ch:
        raise ShapeError(f"conv2d expects {in_ch} input channels, got {x.shape[1]}")
    s, p = params.stride, params.pad
    h_out = _output_extent(x.shape[2], kh, p, s)
    w_out = _output_extent(x.shape[3], kw, p, s)

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
    out = np.tensordot(windows, w.data, axes=([1, 4, 5], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2)) + b.data[None, :, None, None]
    w_data, padded_shape, in_shape = w.data, xp.shape, x.shape

    def backward(g):
        dw = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        db = g.sum(axis=(0, 2, 3))
        dxp = np.zeros(padded_shape, dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                contrib = np.tensordot(g, w_data[:, :, i, j], axes=([1], [0]))
                dxp[:, :, i:i + s * h_out:s, j:j + s * w_out:s] += contrib.transpose(0, 3, 1, 2)
        dx = dxp[:, :, p:p + in_shape[2], p:p + in_shape[3]] if p else dxp
        return np.ascontiguousarray(dx), dw, db

    return apply_op("conv2d", (x, w, b), out, backward)


def maxpool2d(x: Tensor, k: int = 2, stride: int = 2) -> Tensor:
    """Window max over [B x C x H x W]; backward routes to the first argmax.

    Args:
        x: Input batch
        k: Window size
        stride: Window step; H and W must be divisible by it

    Returns:
        Pooled tensor
    """
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d input must be B x C x H x W, got {x.shape}")
    B, C, H, W = x.shape
    if H % stride or W % stride or H < k or W < k:
        raise ShapeError(f"pooling extent {H}x{W} incompatible with k={k}, stride={stride}")
    windows = sliding_window_view(x.data, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    h_out, w_out = windows.shape[2], windows.shape[3]
    flat = windows.reshape(B, C, h_out, w_out, k * k)
    arg = np.argmax(flat, axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    bi, ci, hi, wi = np.indices((B, C, h_out, w_out), sparse=False)
    rows = hi * stride + arg // k
    cols = wi * stride + arg % k

    def backward(g):
        dx = np.zeros((B, C, H, W), dtype=g.dtype)
        np.add.at(dx, (bi, ci, rows, cols), g)
        return (dx,)

    return apply_op("maxpool2d", (x,), np.ascontiguousarray(out), backward)
