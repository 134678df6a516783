"""Configurable convolutional backbone whose tapped layers feed hypercolumns."""

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from src.autodiff import ops
from src.autodiff.tensor import ScalarMode, Tensor, tensor_new
from src.errors import ConfigError, ShapeError
from src.layers.conv import Conv2dParams, conv2d, maxpool2d
from src.layers.norm import BatchNormParams, RunMode, batchnorm

PROJ = "proj"  # the 1x1 projection stage on top of the last conv stage

FeatureMapSet = Dict[str, Tensor]


@dataclass(frozen=True)
class LayerMeta:
    """Geometry of one produced feature map."""
    name: str
    channels: int
    stride_product: int  # input pixels per feature cell along each axis

    def __post_init__(self):
        if self.stride_product < 1:
            raise ShapeError(f"{self.name}: stride_product must be >= 1")


@dataclass
class BackboneSpec:
    """Architecture of the backbone.

    Each stage is ``(num_convs, channels)`` of 3x3 "same" convolutions; a
    stride-2 max-pool follows every stage except the last. An optional 1x1
    projection (``head_channels`` > 0) sits on top.
    """
    stages: List[Tuple[int, int]] = field(
        default_factory=lambda: [(2, 8), (2, 16), (2, 32), (2, 64)])
    head_channels: int = 128
    tap_layers: List[str] = field(
        default_factory=lambda: ["conv1_2", "conv2_2", "conv3_2", "conv4_2", PROJ])
    in_channels: int = 3
    kernel: int = 3
    batch_norm: bool = True
    init: str = "gaussian"
    init_sigma: float = 0.01

    def __post_init__(self):
        if not self.stages:
            raise ConfigError("backbone needs at least one stage")
        for n, ch in self.stages:
            if n < 1 or ch < 1:
                raise ConfigError(f"invalid stage ({n}, {ch})")
        if self.kernel % 2 == 0:
            raise ConfigError(f"kernel size must be odd, got {self.kernel}")
        if not self.tap_layers:
            raise ConfigError("at least one tap layer is required")
        if self.init not in ("gaussian", "checkpoint"):
            raise ConfigError(f"unknown backbone init {self.init!r}")
        known = {m.name for m in self.layer_metas()}
        for tap in self.tap_layers:
            if tap not in known:
                raise ConfigError(f"unknown tap layer {tap!r}; known: {sorted(known)}")
        if len(set(self.tap_layers)) != len(self.tap_layers):
            raise ConfigError("tap layers must be distinct")

    def layer_metas(self) -> List[LayerMeta]:
        """Metadata of every produced layer in execution order."""
        metas = []
        stride = 1
        for s, (n, ch) in enumerate(self.stages, start=1):
            for i in range(1, n + 1):
                metas.append(LayerMeta(f"conv{s}_{i}", ch, stride))
            if s < len(self.stages):
                stride *= 2
                metas.append(LayerMeta(f"pool{s}", ch, stride))
        if self.head_channels > 0:
            metas.append(LayerMeta(PROJ, self.head_channels, stride))
        return metas

    def tap_metas(self) -> List[LayerMeta]:
        """Metadata of the tapped layers, in tap order."""
        by_name = {m.name: m for m in self.layer_metas()}
        return [by_name[t] for t in self.tap_layers]

    def hypercolumn_dim(self) -> int:
        """D: total channels across tapped layers."""
        return sum(m.channels for m in self.tap_metas())

    def max_stride(self) -> int:
        return max(m.stride_product for m in self.tap_metas())


class Backbone:
    """Parameters plus forward pass of a :class:`BackboneSpec`."""

    def __init__(self, spec: BackboneSpec, rng: Optional[np.random.Generator] = None,
                 mode: ScalarMode = ScalarMode.STANDARD):
        """Build the backbone with gaussian-initialized weights and zero biases.

        Args:
            spec: Architecture
            rng: Generator for weight init (required unless weights are loaded later)
            mode: Scalar mode of all parameters
        """
        self.spec = spec
        self.mode = mode
        self.logger = logging.getLogger(__name__)
        self.convs: "OrderedDict[str, Conv2dParams]" = OrderedDict()
        self.norms: "OrderedDict[str, BatchNormParams]" = OrderedDict()
        rng = rng if rng is not None else np.random.default_rng(0)

        in_ch = spec.in_channels
        pad = (spec.kernel - 1) // 2
        for s, (n, ch) in enumerate(spec.stages, start=1):
            for i in range(1, n + 1):
                self._add_conv(f"conv{s}_{i}", in_ch, ch, spec.kernel, pad, rng)
                in_ch = ch
        if spec.head_channels > 0:
            self._add_conv(PROJ, in_ch, spec.head_channels, 1, 0, rng)

    def _add_conv(self, name: str, in_ch: int, out_ch: int, k: int, pad: int,
                  rng: np.random.Generator) -> None:
        weights = tensor_new((out_ch, in_ch, k, k), fill="gaussian", sigma=self.spec.init_sigma,
                             rng=rng, mode=self.mode, requires_grad=True, name=f"{name}.weight")
        bias = tensor_new((out_ch,), mode=self.mode, requires_grad=True, name=f"{name}.bias")
        self.convs[name] = Conv2dParams(weights, bias, stride=1, pad=pad)
        if self.spec.batch_norm:
            self.norms[name] = BatchNormParams.create(out_ch, self.mode, name=f"{name}.bn")

    def parameters(self) -> List[Tensor]:
        """Trainable tensors in a fixed order."""
        params = []
        for name, conv in self.convs.items():
            params.extend([conv.weights, conv.bias])
            if name in self.norms:
                params.extend([self.norms[name].gamma, self.norms[name].beta])
        return params

    def state(self) -> "OrderedDict[str, Tensor]":
        """Every persisted tensor (parameters and running statistics) by name."""
        state = OrderedDict()
        for name, conv in self.convs.items():
            state[conv.weights.name] = conv.weights
            state[conv.bias.name] = conv.bias
            if name in self.norms:
                bn = self.norms[name]
                for t in (bn.gamma, bn.beta, bn.running_mean, bn.running_var):
                    state[t.name] = t
        return state

    def load_state(self, arrays: Mapping[str, np.ndarray], strict: bool = True) -> None:
        """Copy stored arrays into the matching tensors.

        Args:
            arrays: Name -> array
            strict: Require every backbone tensor to be present
        """
        for name, tensor in self.state().items():
            if name not in arrays:
                if strict:
                    raise ConfigError(f"backbone tensor {name} missing from stored state")
                continue
            value = np.asarray(arrays[name])
            if value.shape != tensor.shape:
                raise ShapeError(f"{name}: stored shape {value.shape} != {tensor.shape}")
            tensor.data = value.astype(self.mode.dtype, copy=True)

    def forward(self, x: Tensor, mode: RunMode) -> Tuple[FeatureMapSet, List[LayerMeta]]:
        """Compute every tapped feature map for a [B x C x H x W] batch.

        Layers past the deepest tap are skipped.

        Returns:
            (tap name -> feature map, tap metadata in tap order)
        """
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ShapeError(f"backbone expects B x {self.spec.in_channels} x H x W, got {x.shape}")
        metas = self.spec.tap_metas()
        largest = self.spec.max_stride()
        if x.shape[2] % largest or x.shape[3] % largest:
            raise ShapeError(f"input {x.shape[2]}x{x.shape[3]} not divisible by stride {largest}")

        wanted = set(self.spec.tap_layers)
        fmaps: FeatureMapSet = {}
        h = x
        for meta in self.spec.layer_metas():
            if not wanted - fmaps.keys():
                break
            if meta.name.startswith("pool"):
                h = maxpool2d(h, 2, 2)
            else:
                h = conv2d(h, self.convs[meta.name])
                if meta.name in self.norms:
                    h = batchnorm(h, self.norms[meta.name], mode)
                h = ops.relu(h)
            if meta.name in wanted:
                fmaps[meta.name] = h
        return fmaps, metas


def backbone_forward(spec: BackboneSpec, params: Backbone, x: Tensor,
                     mode: RunMode) -> Tuple[FeatureMapSet, List[LayerMeta]]:
    """Functional entry point: run ``params`` (built from ``spec``) on ``x``."""
    if params.spec is not spec and params.spec != spec:
        raise ConfigError("backbone parameters were built from a different spec")
    return params.forward(x, mode)
