"""Tests for measured update throughput."""

import numpy as np
import pytest

from bench.memory import DENSE_UPSAMPLE, MASKED_DENSE, SAMPLED
from bench.throughput import UpdateStep, dense_rows, measure_throughput
from config.experiment.parser import load_config
from src.engine.model import build_model
from src.errors import ConfigError, ContractError, ResourceError
from src.sampling.pixels import PixelBatch
from tasks.synthetic.generators import gen_segmentation

TINY = [
    "train.mode=verification",
    "backbone.stages=1x4,1x8",
    "backbone.taps=conv1_1,conv2_1,proj",
    "backbone.head_channels=6",
    "head.hidden=8",
    "task.size=16",
    "sample.images_per_batch=2",
    "sample.pixels_per_image=16",
]


@pytest.fixture(scope="module")
def settings():
    return load_config(None, TINY)


@pytest.fixture(scope="module")
def dataset():
    return gen_segmentation(seed=0, n_images=4, size=16)


def test_rate_comes_from_the_clock(settings, dataset, mocker):
    clock = mocker.Mock(side_effect=[10.0, 14.0])
    report = measure_throughput(SAMPLED, settings, iterations=3, warmup=0, dataset=dataset,
                                clock=clock)
    # floors of 20 timed and 5 warmup updates apply
    assert (report.iterations, report.warmup) == (20, 5)
    assert report.seconds == 4.0
    assert report.updates_per_second == 5.0
    assert clock.call_count == 2
    row = report.as_row()
    assert row["config_hash"] == settings.digest()
    assert "host_numpy_version" in row
    assert len(report.to_frame()) == 1


def test_zero_iterations(settings):
    with pytest.raises(ContractError):
        measure_throughput(SAMPLED, settings, iterations=0)


def test_dense_modes_respect_the_budget(settings):
    tight = settings.copy()
    tight.set("bench.budget_scalars", 1000)
    with pytest.raises(ResourceError) as info:
        measure_throughput(MASKED_DENSE, tight, iterations=1)
    # M * H * W * D with D = 4 + 8 + 6
    assert info.value.required == 2 * 16 * 16 * 18
    with pytest.raises(ResourceError) as info:
        measure_throughput(DENSE_UPSAMPLE, tight, iterations=1)
    assert info.value.required == 2 * 2 * 16 * 16 * 18


def test_frozen_clock(settings, dataset):
    with pytest.raises(ContractError):
        measure_throughput(SAMPLED, settings, iterations=1, dataset=dataset, clock=lambda: 1.0)


def test_dense_rows_address_the_flattened_batch():
    batch = PixelBatch(image_index=np.array([0, 1, 1]), rows=np.array([0, 2, 3]),
                       cols=np.array([1, 0, 3]), targets=np.zeros(3, dtype=np.int64),
                       images_per_batch=2, pixels_per_image=2, source_index=np.array([0, 1]),
                       images=[np.zeros((3, 4, 4))] * 2)
    np.testing.assert_array_equal(dense_rows(batch, (4, 4)), [1, 24, 31])


def test_every_pipeline_computes_the_same_loss(settings, dataset):
    losses = [UpdateStep(mode, settings, build_model(settings), dataset)(0)
              for mode in (SAMPLED, MASKED_DENSE, DENSE_UPSAMPLE)]
    assert losses[1] == pytest.approx(losses[0], rel=1e-12)
    assert losses[2] == pytest.approx(losses[0], rel=1e-12)


def test_unknown_mode(settings, dataset):
    with pytest.raises(ConfigError):
        UpdateStep("deconv", settings, build_model(settings), dataset)


@pytest.mark.slow
def test_sampled_beats_masked_dense_at_reference_size():
    cfg = load_config(None, ["sample.pixels_per_image=64"])
    sampled = measure_throughput(SAMPLED, cfg, iterations=20)
    masked = measure_throughput(MASKED_DENSE, cfg, iterations=20)
    assert sampled.updates_per_second > masked.updates_per_second
