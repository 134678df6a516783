"""Slow runs of the reference profile: every task learns its synthetic data."""

from pathlib import Path

import numpy as np
import pytest

from bench.ablation import run_ablation, train_and_evaluate
from config.experiment.parser import load_config

REFERENCE = Path(__file__).resolve().parents[2] / "config" / "experiment" / "reference.cfg"
SEEDS = 5


def reference(*overrides):
    return load_config(REFERENCE, list(overrides))


def median_metrics(kind):
    runs = [train_and_evaluate(reference(f"task.kind={kind}", f"train.seed={seed}"))
            for seed in range(SEEDS)]
    return {key: float(np.median([run.metrics[key] for run in runs]))
            for key in runs[0].metrics}


@pytest.mark.slow
def test_segmentation_reaches_high_mean_iou():
    assert median_metrics("segmentation")["mean_iou"] >= 0.90


@pytest.mark.slow
def test_normals_reach_small_angular_error():
    metrics = median_metrics("normals")
    assert metrics["mean"] <= 10.0
    assert metrics["pct_30"] >= 0.95


@pytest.mark.slow
def test_edges_reach_high_best_f():
    assert median_metrics("edges")["best_f"] >= 0.80


@pytest.mark.slow
def test_training_without_batch_norm_ends_at_a_higher_loss(tmp_path):
    report = run_ablation("batch_norm", reference(), tmp_path, seeds=SEEDS)
    final = report.results.pivot(index="seed", columns="point", values="final_loss")
    assert len(final) == SEEDS
    assert (final["no_bn"] > final["bn"]).sum() >= 4
