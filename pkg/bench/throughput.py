"""Measured SGD updates per second for each hypercolumn pipeline."""

import logging
import platform
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np
import pandas as pd

from bench.memory import DENSE_UPSAMPLE, MASKED_DENSE, MODES, SAMPLED
from config.experiment.settings import ExperimentSettings
from src.autodiff import ops
from src.autodiff.graph import Graph
from src.autodiff.tensor import Tensor
from src.engine.model import PixelModel, build_model
from src.engine.optimizer import SGD
from src.errors import ConfigError, ContractError, ResourceError
from src.heads.mlp import mlp_forward
from src.layers.norm import RunMode
from src.sampling.hypercolumn import sample_hypercolumn
from src.sampling.pixels import PixelBatch, build_batch
from tasks.synthetic.generators import generate
from utils.math.rng import DROPOUT, SAMPLING, RngStreams

logger = logging.getLogger(__name__)

MIN_WARMUP = 5
MIN_TIMED = 20

Clock = Callable[[], float]


def host_descriptor() -> Dict[str, str]:
    return {
        "python_version": platform.python_version(),
        "platform": platform.platform(),
        "processor": platform.processor() or platform.machine(),
        "numpy_version": np.__version__,
    }


@dataclass
class ThroughputReport:
    mode: str
    updates_per_second: float
    iterations: int
    warmup: int
    seconds: float
    host: Dict[str, str] = field(default_factory=dict)
    config: Dict[str, object] = field(default_factory=dict)

    def as_row(self) -> dict:
        row = {"mode": self.mode, "updates_per_second": self.updates_per_second,
               "iterations": self.iterations, "warmup": self.warmup, "seconds": self.seconds}
        row.update({f"host_{k}": v for k, v in self.host.items()})
        row.update(self.config)
        return row

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([self.as_row()])


def dense_rows(batch: PixelBatch, size: Tuple[int, int]) -> np.ndarray:
    """Row of every sampled pixel inside the batch's [M*H*W x D] dense matrix."""
    H, W = size
    return batch.image_index * (H * W) + batch.rows * W + batch.cols


class UpdateStep:
    """One SGD update through a chosen hypercolumn pipeline."""

    def __init__(self, mode: str, settings: ExperimentSettings, model: PixelModel, dataset):
        if mode not in MODES:
            raise ConfigError(f"unknown bench mode {mode!r}")
        self.mode = mode
        self.settings = settings
        self.model = model
        self.dataset = dataset
        self.streams = RngStreams(settings.train.seed)
        self.optimizer = SGD(model.parameters(), momentum=settings.train.momentum,
                             weight_decay=settings.train.weight_decay)

    def _dense_features(self, batch: PixelBatch) -> Tensor:
        images = batch.images
        H, W = images[0].shape[-2:]
        if any(img.shape != images[0].shape for img in images):
            raise ContractError("dense pipelines need equally sized images")
        fmaps, metas = self.model.backbone.forward(self.model.image_tensor(images), RunMode.TRAIN)
        rows, cols = np.divmod(np.arange(H * W, dtype=np.int64), W)
        index = np.repeat(np.arange(len(images), dtype=np.int64), H * W)
        rows, cols = np.tile(rows, len(images)), np.tile(cols, len(images))
        if self.mode == MASKED_DENSE:
            dense = sample_hypercolumn(fmaps, metas, index, rows, cols, image_size=(H, W)).features
        else:
            # one full-resolution map per tap, concatenated afterwards
            parts = [sample_hypercolumn(fmaps, [meta], index, rows, cols, image_size=(H, W)).features
                     for meta in metas]
            dense = ops.concat_columns(parts)
        return ops.take_rows(dense, dense_rows(batch, (H, W)))

    def __call__(self, i: int) -> float:
        cfg = self.settings
        batch = build_batch(self.dataset, cfg.sample.images_per_batch, cfg.sample.pixels_per_image,
                            cfg.sample.strategy, self.streams.get(SAMPLING, i), cfg.sample.rho)
        self.optimizer.zero_grad()
        with Graph(self.model.mode) as graph:
            if self.mode == SAMPLED:
                outputs, targets = self.model.forward_batch(batch, RunMode.TRAIN,
                                                            self.streams.get(DROPOUT, i))
            else:
                outputs = mlp_forward(self._dense_features(batch), self.model.mlp, RunMode.TRAIN,
                                      self.streams.get(DROPOUT, i))
                targets = batch.targets
            loss = self.model.task.loss(outputs, targets)
            graph.backward(loss)
        self.optimizer.step(cfg.train.lr0)
        return loss.item()


def check_budget(mode: str, settings: ExperimentSettings) -> None:
    """Dense pipelines must fit M * H * W * D scalars into ``bench.budget_scalars``."""
    if mode == SAMPLED:
        return
    D = settings.backbone.to_spec().hypercolumn_dim()
    required = settings.sample.images_per_batch * settings.task.size ** 2 * D
    if mode == DENSE_UPSAMPLE:
        required *= 2
    if required > settings.bench.budget_scalars:
        raise ResourceError(f"{mode} hypercolumns exceed the memory budget", required,
                            settings.bench.budget_scalars)


def measure_throughput(mode: str, settings: ExperimentSettings, iterations: int,
                       warmup: Optional[int] = None, dataset=None,
                       clock: Clock = time.perf_counter) -> ThroughputReport:
    """Time SGD updates after an untimed warmup.

    At least 20 updates are timed after at least 5 warmup updates.

    Args:
        mode: ``sampled``, ``masked_dense`` or ``dense_upsample``
        settings: Resolved configuration (model, batch shape, task)
        iterations: Timed updates requested
        warmup: Untimed updates (defaults to ``bench.warmup``)
        dataset: Training images; generated from ``task.*`` when omitted
        clock: Monotonic seconds

    Returns:
        ThroughputReport

    Raises:
        ContractError: When ``iterations`` is 0
        ResourceError: When a dense pipeline exceeds ``bench.budget_scalars``
    """
    if iterations <= 0:
        raise ContractError(f"throughput needs at least one timed iteration, got {iterations}")
    check_budget(mode, settings)
    timed = max(iterations, MIN_TIMED)
    warmup = max(settings.bench.warmup if warmup is None else warmup, MIN_WARMUP)

    task = settings.task
    if dataset is None:
        dataset = generate(task.kind, settings.train.seed,
                           max(2 * settings.sample.images_per_batch, 10), task.size,
                           task.num_classes, task.edge_rate)
    step = UpdateStep(mode, settings, build_model(settings), dataset)
    for i in range(warmup):
        step(i)
    start = clock()
    for i in range(warmup, warmup + timed):
        step(i)
    seconds = clock() - start
    if seconds <= 0:
        raise ContractError(f"clock did not advance over {timed} updates")

    report = ThroughputReport(
        mode=mode, updates_per_second=timed / seconds, iterations=timed, warmup=warmup,
        seconds=seconds, host=host_descriptor(),
        config={"task": task.kind, "size": task.size,
                "images_per_batch": settings.sample.images_per_batch,
                "pixels_per_image": settings.sample.pixels_per_image,
                "config_hash": settings.digest()})
    logger.info(f"{mode}: {report.updates_per_second:.2f} updates/s over {timed} updates")
    return report
