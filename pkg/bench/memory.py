"""Analytic scalar-count memory accounting for the three hypercolumn pipelines.

Retention policy: every forward activation is kept until the end of the
step; during backward the gradient of a buffer lives while its producer
and consumer are processed, so at most two adjacent activation gradients
are live at once. Parameters, their gradients and the SGD velocities are
resident throughout.

Pipelines:
    sampled          feature maps, then |P| x D rows interpolated on demand
    masked_dense     the full H*W x D matrix per image, then masked to |P| rows
    dense_upsample   every tap upsampled to H x W, concatenated, then masked
"""

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

from src.autodiff.tensor import ScalarMode
from src.errors import ConfigError
from src.layers.backbone import BackboneSpec

SAMPLED = "sampled"
MASKED_DENSE = "masked_dense"
DENSE_UPSAMPLE = "dense_upsample"
MODES = (SAMPLED, MASKED_DENSE, DENSE_UPSAMPLE)

# indices (4) and weights (4) per row per tap
PROVENANCE_PER_TAP = 8

STATIC = "static"
BACKBONE = "backbone"
HYPERCOLUMN = "hypercolumn"
HEAD = "head"


@dataclass
class Buffer:
    name: str
    scalars: int
    stage: str
    grad: bool = True  # carries an activation gradient in backward


@dataclass
class MemoryReport:
    """Peak live scalars of one training step and every buffer behind it."""
    mode: str
    peak_scalars: int
    breakdown: List[Tuple[str, int]]
    stages: Dict[str, int] = field(default_factory=dict)
    scalar_mode: ScalarMode = ScalarMode.STANDARD

    @property
    def bytes_at_mode(self) -> int:
        return self.peak_scalars * self.scalar_mode.dtype.itemsize

    def stage_scalars(self, stage: str) -> int:
        return self.stages.get(stage, 0)

    def total_scalars(self) -> int:
        return sum(n for _, n in self.breakdown)


def parameter_count(spec: BackboneSpec, mlp_widths: Sequence[int]) -> Tuple[int, int]:
    """(trainable scalars, running statistics) of backbone plus MLP."""
    trainable, running = 0, 0
    in_ch = spec.in_channels
    for n, ch in spec.stages:
        for _ in range(n):
            trainable += ch * in_ch * spec.kernel * spec.kernel + ch
            if spec.batch_norm:
                trainable += 2 * ch
                running += 2 * ch
            in_ch = ch
    if spec.head_channels > 0:
        trainable += spec.head_channels * in_ch + spec.head_channels
        if spec.batch_norm:
            trainable += 2 * spec.head_channels
            running += 2 * spec.head_channels
    widths = [spec.hypercolumn_dim(), *mlp_widths]
    for a, b in zip(widths[:-1], widths[1:]):
        trainable += a * b + b
    return trainable, running


def backbone_buffers(spec: BackboneSpec, image_size: Tuple[int, int], M: int) -> List[Buffer]:
    """Activations of the backbone forward up to the deepest tap."""
    H, W = image_size
    deepest = max(i for i, m in enumerate(spec.layer_metas()) if m.name in spec.tap_layers)
    buffers = [Buffer("input", M * spec.in_channels * H * W, BACKBONE, grad=False)]
    for meta in spec.layer_metas()[:deepest + 1]:
        cells = M * meta.channels * (H // meta.stride_product) * (W // meta.stride_product)
        if meta.name.startswith("pool"):
            buffers.append(Buffer(meta.name, cells, BACKBONE))
            continue
        buffers.append(Buffer(f"{meta.name}.conv", cells, BACKBONE))
        if spec.batch_norm:
            buffers.append(Buffer(f"{meta.name}.bn", cells, BACKBONE))
        buffers.append(Buffer(f"{meta.name}.relu", cells, BACKBONE))
    return buffers


def hypercolumn_buffers(mode: str, spec: BackboneSpec, image_size: Tuple[int, int], M: int,
                        N: int) -> List[Buffer]:
    H, W = image_size
    D = spec.hypercolumn_dim()
    T = len(spec.tap_layers)
    sampled, dense = M * N, M * H * W
    if mode == SAMPLED:
        return [Buffer("provenance", sampled * T * PROVENANCE_PER_TAP, HYPERCOLUMN, grad=False),
                Buffer("hypercolumns", sampled * D, HYPERCOLUMN)]
    buffers = []
    if mode == DENSE_UPSAMPLE:
        # execution order: the deepest tap is upsampled last
        order = [m for m in spec.layer_metas() if m.name in spec.tap_layers]
        buffers += [Buffer(f"upsampled.{m.name}", dense * m.channels, HYPERCOLUMN) for m in order]
    buffers += [Buffer("provenance", dense * T * PROVENANCE_PER_TAP, HYPERCOLUMN, grad=False),
                Buffer("hypercolumns", dense * D, HYPERCOLUMN),
                Buffer("masked_rows", sampled * D, HYPERCOLUMN)]
    return buffers


def head_buffers(rows: int, mlp_widths: Sequence[int]) -> List[Buffer]:
    buffers = []
    last = len(mlp_widths) - 1
    for i, width in enumerate(mlp_widths):
        buffers.append(Buffer(f"mlp.fc{i + 1}", rows * width, HEAD))
        if i < last:
            buffers.append(Buffer(f"mlp.fc{i + 1}.relu", rows * width, HEAD))
    buffers.append(Buffer("loss", 1, HEAD))
    return buffers


def account_memory(mode: str, spec: BackboneSpec, image_size: Tuple[int, int], M: int, N: int,
                   mlp_widths: Sequence[int],
                   scalar_mode: ScalarMode = ScalarMode.STANDARD) -> MemoryReport:
    """Count the live scalars of one forward/backward step.

    Args:
        mode: ``sampled``, ``masked_dense`` or ``dense_upsample``
        spec: Backbone architecture (taps define D)
        image_size: (H, W)
        M: Images per batch
        N: Pixels per image
        mlp_widths: Hidden widths followed by the output width
        scalar_mode: Scalar width used for ``bytes_at_mode``

    Returns:
        MemoryReport

    Raises:
        ConfigError: For an unknown mode or an impossible batch
    """
    if mode not in MODES:
        raise ConfigError(f"unknown memory mode {mode!r}; expected one of {', '.join(MODES)}")
    H, W = image_size
    if M < 1 or N < 1 or N > H * W:
        raise ConfigError(f"cannot sample {N} pixels from each of {M} {H}x{W} images")
    if not mlp_widths:
        raise ConfigError("mlp_widths needs at least the output width")

    trainable, running = parameter_count(spec, mlp_widths)
    static = [Buffer("parameters", trainable, STATIC, grad=False),
              Buffer("parameter_grads", trainable, STATIC, grad=False),
              Buffer("velocity", trainable, STATIC, grad=False),
              Buffer("running_stats", running, STATIC, grad=False)]
    forward = (backbone_buffers(spec, image_size, M)
               + hypercolumn_buffers(mode, spec, image_size, M, N)
               + head_buffers(M * N, mlp_widths))

    chain = [b.scalars for b in forward if b.grad]
    live_grads = max((a + b for a, b in zip(chain[:-1], chain[1:])), default=sum(chain))
    buffers = static + forward
    peak = sum(b.scalars for b in buffers) + live_grads

    stages: Dict[str, int] = {}
    for b in buffers:
        stages[b.stage] = stages.get(b.stage, 0) + b.scalars
    breakdown = [(b.name, b.scalars) for b in buffers] + [("activation_grads", live_grads)]
    return MemoryReport(mode, peak, breakdown, stages, scalar_mode)
