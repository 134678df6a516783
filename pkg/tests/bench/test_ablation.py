"""Tests for ablation grids, the result cache and the summary."""

from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from bench.ablation import (
    FAILED,
    OK,
    AblationRunner,
    GridPoint,
    ResultCache,
    RunOutcome,
    final_loss,
    registered_grid,
    run_ablation,
    summarize,
)
from config.experiment.parser import load_config
from src.errors import ConfigError

REFERENCE = Path(__file__).resolve().parents[2] / "config" / "experiment" / "reference.cfg"


def fake_runner(calls, fail_below=0):
    """Deterministic stand-in for train + evaluate."""
    def run(cfg):
        calls.append(cfg.digest())
        n = cfg.sample.pixels_per_image
        if n < fail_below:
            raise RuntimeError(f"{n} pixels is too few")
        losses = np.linspace(1.0, 0.1 + 1.0 / n, 20) + 0.01 * cfg.train.seed
        return RunOutcome(losses, {"mean_iou": 0.5 + 0.01 * cfg.train.seed, "mean_accuracy": 0.6},
                          "mean_iou")
    return run


@pytest.fixture
def settings():
    return load_config(None, ["bench.seeds=3"])


class TestGrids:
    def test_sampling_fraction(self, settings):
        grid = registered_grid("sampling_fraction", settings)
        assert [p.label for p in grid] == ["100%", "25%", "4%"]
        assert [p.apply(settings).sample.pixels_per_image for p in grid] == [1024, 256, 41]

    def test_diversity_keeps_pixels_per_update(self, settings):
        grid = registered_grid("diversity", settings)
        assert [p.label for p in grid] == ["5x256", "1x1280"]
        applied = [p.apply(settings) for p in grid]
        shapes = [(s.sample.images_per_batch, s.sample.pixels_per_image) for s in applied]
        assert shapes == [(5, 256), (1, 1280)]
        # 1280 pixels need a 40 x 40 image at stride 8
        assert [s.task.size for s in applied] == [40, 40]
        for s in applied:
            s.validate()

    def test_bias_rho_runs_on_edges(self, settings):
        grid = registered_grid("bias_rho", settings)
        assert len(grid) == 4
        assert all(p.apply(settings).task.kind == "edges" for p in grid)
        for p in grid:
            p.apply(settings).validate()

    def test_taps(self, settings):
        without = registered_grid("taps", settings)[1].apply(settings)
        assert "proj" not in without.backbone.taps

    def test_apply_leaves_the_base_untouched(self, settings):
        GridPoint("x", (("train.seed", 5),)).apply(settings)
        assert settings.train.seed == 0

    def test_unknown_grid(self, settings):
        with pytest.raises(ConfigError):
            registered_grid("dropout", settings)


def test_final_loss_averages_the_last_tenth():
    assert final_loss(np.arange(20.0)) == 18.5
    assert final_loss(np.array([3.0])) == 3.0
    assert np.isnan(final_loss(np.array([])))


def test_summary_is_a_median_over_successful_runs():
    frame = pd.DataFrame({
        "point": ["a", "a", "a", "b"],
        "seed": [0, 1, 2, 0],
        "status": [OK, OK, FAILED, FAILED],
        "final_loss": [1.0, 3.0, np.nan, np.nan],
    })
    summary = summarize(frame).set_index("point")
    assert summary.loc["a", "final_loss"] == 2.0
    assert (summary.loc["a", "runs"], summary.loc["a", "failed"]) == (2, 1)
    assert (summary.loc["b", "runs"], summary.loc["b", "failed"]) == (0, 1)
    assert "seed" not in summary.columns


def test_rerun_reuses_cached_rows(settings, tmp_path):
    calls = []
    first = run_ablation("sampling_fraction", settings, tmp_path, runner=fake_runner(calls))
    assert len(calls) == 9
    assert len(first.results) == 9
    assert (first.results["status"] == OK).all()
    assert (tmp_path / "runs").is_dir() and len(list((tmp_path / "runs").iterdir())) == 9

    again = run_ablation("sampling_fraction", settings, tmp_path, runner=fake_runner(calls))
    assert len(calls) == 9
    pd.testing.assert_frame_equal(again.summary, first.summary)
    assert len(pd.read_csv(tmp_path / "sampling_fraction.csv")) == 9


def test_seeds_count_up_from_the_base_seed(settings, tmp_path):
    settings.set("train.seed", 10)
    report = run_ablation("mlp_width", settings, tmp_path, seeds=2, runner=fake_runner([]))
    assert sorted(set(report.results["seed"])) == [10, 11]
    summary = report.summary.set_index("point")
    assert summary.loc["32x3", "metric_mean_iou"] == pytest.approx(0.605)


def test_failed_runs_are_recorded_and_retried(settings, tmp_path):
    calls = []
    runner = AblationRunner(settings, tmp_path, fake_runner(calls, fail_below=100), plots=False)
    report = runner.run("sampling_fraction", seeds=2)
    failed = report.results[report.results["status"] == FAILED]
    assert list(failed["point"]) == ["4%", "4%"]
    assert failed["error"].str.contains("RuntimeError").all()
    summary = report.summary.set_index("point")
    assert (summary.loc["4%", "runs"], summary.loc["4%", "failed"]) == (0, 2)
    assert summary.loc["100%", "runs"] == 2

    runner.run("sampling_fraction", seeds=2)
    assert len(calls) == 6 + 2


def test_ablation_iterations_override(settings, tmp_path):
    settings.set("bench.ablation_iterations", 7)
    cfg = AblationRunner(settings, tmp_path).configure(GridPoint("p", ()), seed=3)
    assert (cfg.train.iterations, cfg.train.seed) == (7, 3)


def test_plots_are_written(settings, tmp_path):
    report = run_ablation("diversity", settings, tmp_path, seeds=1, runner=fake_runner([]))
    svgs = sorted(p.name for p in report.files if p.suffix == ".svg")
    assert svgs == ["diversity_loss.svg", "diversity_mean_iou.svg"]
    assert (tmp_path / "diversity_loss.svg").read_text().lstrip().startswith("<?xml")


def test_cache_ignores_failed_rows(tmp_path):
    cache = ResultCache(tmp_path / "grid.csv")
    cache.append({"ablation": "g", "point": "1", "seed": 0, "config_hash": "abc",
                  "status": FAILED, "error": "boom"})
    reloaded = ResultCache(tmp_path / "grid.csv")
    assert reloaded.get("abc") is None
    assert reloaded.rows[0]["point"] == "1"




def test_batch_norm_grid(settings):
    grid = registered_grid("batch_norm", settings)
    assert [(p.label, p.apply(settings).backbone.batch_norm) for p in grid] == [
        ("bn", True), ("no_bn", False)]


def per_seed(report, column):
    return report.results.pivot(index="seed", columns="point", values=column)


@pytest.mark.slow
def test_four_percent_of_pixels_matches_all_pixels(tmp_path):
    settings = load_config(REFERENCE)
    grid = [p for p in registered_grid("sampling_fraction", settings) if p.label != "25%"]
    assert [p.label for p in grid] == ["100%", "4%"]
    report = run_ablation("sampling_fraction", settings, tmp_path, grid=grid, seeds=5)
    summary = report.summary.set_index("point")
    assert (summary["runs"] == 5).all()
    gap = summary.loc["100%", "metric_mean_iou"] - summary.loc["4%", "metric_mean_iou"]
    assert abs(gap) <= 0.02


@pytest.mark.slow
def test_many_images_beat_one_image_at_equal_pixels(tmp_path):
    report = run_ablation("diversity", load_config(REFERENCE), tmp_path, seeds=5)
    scores = per_seed(report, "metric_mean_iou")
    assert (scores["5x256"] > scores["1x1280"]).sum() >= 4


@pytest.mark.slow
def test_biased_sampling_beats_uniform_on_edges(tmp_path):
    report = run_ablation("bias_rho", load_config(REFERENCE), tmp_path, seeds=5)
    best_f = report.summary.set_index("point")["metric_best_f"]
    for label in ("rho=0.25", "rho=0.5", "rho=0.75"):
        assert best_f[label] > best_f["uniform"], label
