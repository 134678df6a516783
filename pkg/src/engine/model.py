"""Backbone + per-pixel MLP + task head, wired together."""

import logging
from collections import OrderedDict
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from config.experiment.settings import ExperimentSettings
from src.autodiff import ops
from src.autodiff.tensor import ScalarMode, Tensor
from src.engine.checkpoint import load_checkpoint
from src.errors import ConfigError
from src.heads.mlp import MlpParams, mlp_forward
from src.heads.task import TaskHead, TaskKind
from src.layers.backbone import Backbone
from src.layers.norm import RunMode
from src.sampling.hypercolumn import sample_hypercolumn
from src.sampling.pixels import PixelBatch
from utils.math.rng import INIT, RngStreams

NORMALS_LAST_SIGMA = 5e-3


class PixelModel:
    """Everything that maps an image batch plus pixel coordinates to per-pixel outputs."""

    def __init__(self, backbone: Backbone, mlp: MlpParams, task: TaskHead):
        if mlp.in_dim != backbone.spec.hypercolumn_dim():
            raise ConfigError(f"MLP expects D={mlp.in_dim}, backbone taps give "
                              f"D={backbone.spec.hypercolumn_dim()}")
        if mlp.out_dim != task.num_outputs:
            raise ConfigError(f"MLP emits {mlp.out_dim} outputs, task needs {task.num_outputs}")
        self.backbone = backbone
        self.mlp = mlp
        self.task = task
        self.logger = logging.getLogger(__name__)

    @property
    def mode(self) -> ScalarMode:
        return self.backbone.mode

    def parameters(self) -> List[Tensor]:
        return self.backbone.parameters() + self.mlp.parameters()

    def state(self) -> "OrderedDict[str, Tensor]":
        state = OrderedDict(self.backbone.state())
        state.update(self.mlp.state())
        return state

    def load_state(self, arrays: Mapping[str, np.ndarray]) -> None:
        for name, tensor in self.state().items():
            if name not in arrays:
                raise ConfigError(f"tensor {name} missing from stored state")
            tensor.data = np.asarray(arrays[name]).astype(self.mode.dtype, copy=True)

    def image_tensor(self, images: Sequence[np.ndarray]) -> Tensor:
        return Tensor(np.stack(images).astype(self.mode.dtype), mode=self.mode)

    def hypercolumns(self, images: Sequence[np.ndarray], image_index: np.ndarray, rows: np.ndarray,
                     cols: np.ndarray, mode: RunMode) -> Tuple[Tensor, np.ndarray]:
        """Hypercolumn rows for pixels spread over images of possibly different sizes.

        Images sharing a size go through one backbone forward.

        Returns:
            (features [P x D], order) where ``features[k]`` belongs to entry ``order[k]``
        """
        groups: Dict[Tuple[int, ...], List[int]] = OrderedDict()
        for slot, image in enumerate(images):
            groups.setdefault(tuple(image.shape), []).append(slot)

        parts, order = [], []
        for shape, slots in groups.items():
            fmaps, metas = self.backbone.forward(self.image_tensor([images[s] for s in slots]), mode)
            local = {s: k for k, s in enumerate(slots)}
            entries = np.flatnonzero(np.isin(image_index, slots))
            hc = sample_hypercolumn(fmaps, metas, np.array([local[s] for s in image_index[entries]]),
                                    rows[entries], cols[entries], image_size=shape[-2:])
            parts.append(hc.features)
            order.append(entries)
        return ops.concat_rows(parts), np.concatenate(order)

    def forward_batch(self, batch: PixelBatch, mode: RunMode,
                      rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, np.ndarray]:
        """Outputs [S x K] for every sampled pixel and the matching targets."""
        features, order = self.hypercolumns(batch.images, batch.image_index, batch.rows,
                                            batch.cols, mode)
        return mlp_forward(features, self.mlp, mode, rng), batch.targets[order]


def build_model(settings: ExperimentSettings, streams: Optional[RngStreams] = None) -> PixelModel:
    """Fresh model for a configuration.

    With ``backbone.init=checkpoint`` the backbone tensors come from another
    run's checkpoint and only the head is newly initialized.
    """
    streams = streams or RngStreams(settings.train.seed)
    mode = ScalarMode(settings.train.mode)
    rng = streams.get(INIT)
    spec = settings.backbone.to_spec()
    backbone = Backbone(spec, rng, mode)
    if settings.backbone.init == "checkpoint":
        arrays, _, _ = load_checkpoint(Path(settings.backbone.checkpoint))
        backbone.load_state(arrays, strict=True)
        backbone.logger.info(f"Backbone initialized from {settings.backbone.checkpoint}")

    task = TaskHead(TaskKind(settings.task.kind), num_classes=settings.task.num_classes)
    head = settings.head
    last_sigma = head.last_sigma or (NORMALS_LAST_SIGMA if task.kind is TaskKind.NORMALS else None)
    mlp = MlpParams.create(spec.hypercolumn_dim(), head.hidden, task.num_outputs, rng,
                           sigma=head.init_sigma, last_sigma=last_sigma, dropout_rate=head.dropout,
                           feature_norm=head.feature_norm, mode=mode)
    return PixelModel(backbone, mlp, task)
