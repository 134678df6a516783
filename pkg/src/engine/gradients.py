"""Finite-difference check of a whole model: backbone, sampler, MLP and task loss."""

import logging
from typing import Optional

import numpy as np

from config.experiment.settings import ExperimentSettings
from src.autodiff.gradcheck import GradCheckReport, grad_check
from src.autodiff.tensor import ScalarMode
from src.engine.model import build_model
from src.errors import ConfigError
from src.layers.norm import RunMode
from src.sampling.pixels import build_batch
from tasks.synthetic.generators import generate
from utils.math.rng import DROPOUT, SAMPLING, RngStreams

logger = logging.getLogger(__name__)

GRAD_CHECK_EPS = 1e-5


def check_size(stride: int) -> int:
    """Smallest generator size (a power of two, at least 16) holding two strides."""
    size = 16
    while size < 2 * stride:
        size *= 2
    return size


def pipeline_grad_check(settings: ExperimentSettings, images: int = 1, pixels: int = 20,
                        eps: float = GRAD_CHECK_EPS, max_per_param: Optional[int] = None,
                        ) -> GradCheckReport:
    """Gradient-check the configured model on a freshly generated batch.

    Conv biases that feed a batch norm are left out: train-mode
    normalization removes them from the loss, so their gradient is zero and
    a finite difference measures rounding only.

    Args:
        settings: Configuration in verification mode
        images: Images in the checked batch
        pixels: Pixels sampled per image
        eps: Finite-difference step
        max_per_param: Scalars checked per parameter tensor (None = all)

    Returns:
        The grad_check report
    """
    if settings.train.mode != ScalarMode.VERIFICATION.value:
        raise ConfigError("gradient checks need train.mode=verification")
    streams = RngStreams(settings.train.seed)
    model = build_model(settings, streams)
    size = check_size(model.backbone.spec.max_stride())
    task = settings.task
    dataset = generate(task.kind, settings.train.seed, images, size, task.num_classes,
                       task.edge_rate)
    batch = build_batch(dataset, images, pixels, "uniform", streams.get(SAMPLING, 0))

    def loss():
        outputs, targets = model.forward_batch(batch, RunMode.TRAIN, streams.get(DROPOUT, 0))
        return model.task.loss(outputs, targets)

    normalized = {id(model.backbone.convs[name].bias) for name in model.backbone.norms}
    params = [p for p in model.parameters() if id(p) not in normalized]
    logger.info(f"Checking {len(params)} of {len(model.parameters())} parameter tensors "
                f"on {images}x{pixels} pixels of a {size}x{size} {task.kind} image")
    return grad_check(loss, params, eps=eps, max_per_param=max_per_param,
                      rng=np.random.default_rng(settings.train.seed))
