"""End-to-end training runs on tiny synthetic data in verification mode."""

import numpy as np
import pandas as pd
import pytest

from config.experiment.parser import load_config
from src.engine.checkpoint import load_checkpoint
from src.engine.model import build_model
from src.engine.trainer import CHECKPOINT_DIR, LOG_FILE, TrainLog, Trainer, train
from src.errors import ContractError, NumericError
from tasks.synthetic.generators import gen_edges, gen_normals, gen_segmentation

TINY = [
    "train.mode=verification",
    "backbone.stages=1x4,1x8",
    "backbone.taps=conv1_1,conv2_1,proj",
    "backbone.head_channels=6",
    "head.hidden=8",
    "task.size=16",
    "train.iterations=6",
    "train.lr0=0.01",
    "sample.images_per_batch=2",
    "sample.pixels_per_image=16",
]


def settings(*overrides):
    return load_config(None, TINY + list(overrides))


@pytest.fixture(scope="module")
def dataset():
    return gen_segmentation(seed=0, n_images=4, size=16)


def fresh_run(cfg, dataset, **kwargs):
    return train(cfg, build_model(cfg), dataset, **kwargs)


def test_same_seed_reproduces_losses_and_weights(dataset):
    cfg = settings()
    a, b = fresh_run(cfg, dataset), fresh_run(cfg, dataset)
    assert len(a.log) == 6
    np.testing.assert_array_equal(a.log.losses(), b.log.losses())
    for key, value in a.model.state().items():
        np.testing.assert_array_equal(value.data, b.model.state()[key].data)


def test_different_seed_changes_the_run(dataset):
    a = fresh_run(settings(), dataset)
    b = fresh_run(settings("train.seed=1"), dataset)
    assert not np.array_equal(a.log.losses(), b.log.losses())


def test_resume_matches_an_uninterrupted_run(dataset, tmp_path):
    cfg = settings("train.schedule=3:0.5")
    full = fresh_run(cfg, dataset)

    first = Trainer(cfg, build_model(cfg), dataset, out_dir=tmp_path / "part")
    first.run(stop_at=3)
    assert first.iteration == 3
    resumed = fresh_run(cfg, dataset, out_dir=tmp_path / "rest",
                        resume_from=tmp_path / "part" / CHECKPOINT_DIR)

    assert resumed.state.iteration == 6
    np.testing.assert_array_equal(resumed.log.losses(), full.log.losses())
    for key, value in full.model.state().items():
        np.testing.assert_array_equal(resumed.model.state()[key].data, value.data)


def test_zero_iterations_leaves_the_model_untouched(dataset, tmp_path):
    cfg = settings("train.iterations=0")
    model = build_model(cfg)
    before = {k: v.data.copy() for k, v in model.state().items()}
    result = train(cfg, model, dataset, out_dir=tmp_path)
    assert len(result.log) == 0
    assert result.state.iteration == 0
    for key, value in before.items():
        np.testing.assert_array_equal(model.state()[key].data, value)
    assert (tmp_path / CHECKPOINT_DIR).is_dir()


def test_empty_dataset_is_rejected():
    cfg = settings()
    with pytest.raises(ContractError):
        Trainer(cfg, build_model(cfg), gen_segmentation(seed=0, n_images=0, size=16))


def test_nan_aborts_and_keeps_the_last_checkpoint(dataset, tmp_path):
    cfg = settings()
    trainer = Trainer(cfg, build_model(cfg), dataset, out_dir=tmp_path)
    trainer.run(stop_at=2)
    trainer.model.mlp.layers[0][0].data[...] = np.nan
    with pytest.raises(NumericError):
        trainer.run()
    _, state, _ = load_checkpoint(tmp_path / CHECKPOINT_DIR)
    assert state.iteration == 2


def test_log_files_and_heldout_metrics(dataset, tmp_path):
    heldout = gen_segmentation(seed=9, n_images=2, size=16)
    cfg = settings("train.eval_every=3", "train.checkpoint_every=2")
    result = fresh_run(cfg, dataset, heldout=heldout, out_dir=tmp_path)
    frame = pd.read_csv(tmp_path / LOG_FILE)
    assert list(frame["iteration"]) == list(range(6))
    assert frame["eval_mean_iou"].notna().sum() == 2
    reloaded = TrainLog.read_csv(tmp_path / LOG_FILE)
    np.testing.assert_array_equal(reloaded.losses(), result.log.losses())
    _, state, manifest = load_checkpoint(tmp_path / CHECKPOINT_DIR)
    assert state.iteration == 6
    assert "task.size = 16" in manifest["config"].splitlines()


def test_losses_are_finite_with_half_scale_views(dataset):
    result = fresh_run(settings("train.random_half_scale=true"), dataset)
    assert np.isfinite(result.log.losses()).all()


def test_batch_dumps(dataset, tmp_path):
    fresh_run(settings("sample.dump_batches=2"), dataset, out_dir=tmp_path)
    dumps = sorted(p.name for p in (tmp_path / "batches").iterdir())
    assert dumps == ["batch_00000.csv", "batch_00001.csv"]
    frame = pd.read_csv(tmp_path / "batches" / dumps[0])
    assert len(frame) == 2 * 16


def test_edges_with_biased_sampling(tmp_path):
    cfg = settings("task.kind=edges", "sample.strategy=biased", "sample.rho=0.5")
    result = fresh_run(cfg, gen_edges(seed=0, n_images=3, size=16))
    assert np.isfinite(result.log.losses()).all()


@pytest.mark.slow
def test_segmentation_loss_decreases():
    cfg = load_config(None, [
        "train.mode=verification", "backbone.stages=1x8,1x16", "backbone.taps=conv1_1,conv2_1,proj",
        "backbone.head_channels=16", "backbone.init_sigma=0.1", "head.hidden=32,32",
        "head.init_sigma=0.05", "task.size=16", "train.iterations=150", "train.lr0=0.05",
        "sample.images_per_batch=4", "sample.pixels_per_image=64",
    ])
    result = fresh_run(cfg, gen_segmentation(seed=0, n_images=20, size=16))
    losses = result.log.losses()
    assert losses[-15:].mean() < 0.8 * losses[:15].mean()


def test_backbone_initialized_from_another_task(tmp_path):
    normals_cfg = settings("task.kind=normals")
    source = fresh_run(normals_cfg, gen_normals(seed=0, n_images=3, size=16), out_dir=tmp_path)
    cfg = settings("backbone.init=checkpoint", f"backbone.checkpoint={tmp_path / CHECKPOINT_DIR}")
    model = build_model(cfg)
    for name, tensor in model.backbone.state().items():
        np.testing.assert_array_equal(tensor.data, source.model.backbone.state()[name].data)
    assert model.mlp.out_dim == 4
