"""Training loop: sample pixels, forward, loss, backward, SGD update."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
import pandas as pd

from config.experiment.parser import render_config
from config.experiment.settings import ExperimentSettings
from src.autodiff.graph import Graph
from src.engine.checkpoint import load_checkpoint, save_checkpoint
from src.engine.model import PixelModel
from src.engine.optimizer import SGD, OptimState
from src.engine.schedule import lr_at, parse_schedule
from src.errors import ContractError, NumericError
from src.inference.evaluate import evaluate_dataset
from src.inference.resize import resize_bilinear, resize_nearest
from src.layers.norm import RunMode
from src.sampling.pixels import build_batch
from utils.math.rng import AUGMENT, DROPOUT, SAMPLING, RngStreams

LOG_FILE = "train_log.csv"
CHECKPOINT_DIR = "checkpoint"


class TrainLog:
    """One row per iteration (iteration, lr, loss) plus metric columns at eval points."""

    COLUMNS = ["iteration", "lr", "loss"]

    def __init__(self):
        self.rows = []

    def __len__(self) -> int:
        return len(self.rows)

    def record(self, iteration: int, lr: float, loss: float) -> None:
        self.rows.append({"iteration": iteration, "lr": lr, "loss": loss})

    def add_metrics(self, metrics: Dict[str, float]) -> None:
        """Attach metrics to the latest row."""
        if not self.rows:
            return
        self.rows[-1].update({f"eval_{k}": v for k, v in metrics.items()})

    def losses(self) -> np.ndarray:
        return np.array([row["loss"] for row in self.rows], dtype=np.float64)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.rows)
        return frame if len(frame.columns) else pd.DataFrame(columns=self.COLUMNS)

    def write_csv(self, path: Union[str, Path]) -> None:
        # repr-exact floats so a reloaded log compares equal
        self.to_frame().to_csv(path, index=False, float_format="%.17g")

    @classmethod
    def read_csv(cls, path: Union[str, Path]) -> "TrainLog":
        log = cls()
        frame = pd.read_csv(path)
        for record in frame.to_dict(orient="records"):
            record = {k: v for k, v in record.items() if not (isinstance(v, float) and np.isnan(v))}
            record["iteration"] = int(record["iteration"])
            log.rows.append(record)
        return log


class HalfScaleView:
    """Training view that shrinks each image to 0.5x with probability 1/2.

    Targets are resampled nearest-neighbour so labels stay valid. Images
    whose half size would not divide by the backbone stride are left alone.
    """

    def __init__(self, dataset, rng: np.random.Generator, stride: int):
        self.dataset = dataset
        self.rng = rng
        self.stride = stride

    def __call__(self, index: int, _rng: np.random.Generator):
        image, target = self.dataset.item(index)
        H, W = image.shape[-2:]
        if self.rng.random() >= 0.5 or (H // 2) % self.stride or (W // 2) % self.stride:
            return image, target
        size = (H // 2, W // 2)
        return resize_bilinear(image, size), resize_nearest(target, size)


@dataclass
class TrainResult:
    model: PixelModel
    log: TrainLog
    state: OptimState
    checkpoint: Optional[Path] = None


class Trainer:
    """Owns the model parameters and applies every update."""

    def __init__(self, settings: ExperimentSettings, model: PixelModel, dataset,
                 heldout=None, out_dir: Optional[Union[str, Path]] = None):
        """Initialize the trainer.

        Args:
            settings: Resolved configuration
            model: Model to train in place
            dataset: Training data (``__len__`` and ``item(i)``)
            heldout: Optional evaluation data
            out_dir: Run directory for checkpoints, logs and batch dumps
        """
        if len(dataset) == 0:
            raise ContractError("training needs a non-empty dataset")
        self.settings = settings
        self.model = model
        self.dataset = dataset
        self.heldout = heldout
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.logger = logging.getLogger(__name__)

        train = settings.train
        self.streams = RngStreams(train.seed)
        self.schedule = parse_schedule(train.schedule, train.iterations)
        self.optimizer = SGD(model.parameters(), momentum=train.momentum,
                             weight_decay=train.weight_decay, check_numerics=train.check_numerics)
        self.log = TrainLog()
        self.last_checkpoint: Optional[Path] = None

    @property
    def iteration(self) -> int:
        return self.optimizer.state.iteration

    def resume(self, path: Union[str, Path]) -> None:
        """Continue from a checkpoint: parameters, running stats, velocities, counters, log."""
        path = Path(path)
        arrays, state, _ = load_checkpoint(path)
        self.model.load_state(arrays)
        self.optimizer.state = state
        if (path / LOG_FILE).exists():
            self.log = TrainLog.read_csv(path / LOG_FILE)
        self.logger.info(f"Resumed from {path} at iteration {state.iteration}")

    def run(self, stop_at: Optional[int] = None) -> TrainResult:
        """Train until ``train.iterations`` (or ``stop_at`` when earlier).

        Raises:
            NumericError: If the loss becomes non-finite; the last checkpoint is kept
        """
        total = self.settings.train.iterations
        stop = total if stop_at is None else min(stop_at, total)
        self.logger.info(f"Training {self.settings.task.kind} from iteration {self.iteration} "
                         f"to {stop} of {total}")
        try:
            while self.iteration < stop:
                self._step(self.iteration)
                done = self.iteration
                if self._due(self.settings.train.eval_every, done) and done < total:
                    self._evaluate()
                if self._due(self.settings.train.checkpoint_every, done) and done < stop:
                    self.save_checkpoint()
        except NumericError as e:
            self.logger.error(f"Training aborted at iteration {self.iteration}: {e}; "
                              f"last checkpoint kept at {self.last_checkpoint}", exc_info=True)
            raise

        if self.iteration == total and total > 0:
            self._evaluate()
        if self.out_dir is not None:
            self.save_checkpoint()
            self.log.write_csv(self.out_dir / LOG_FILE)
        self.logger.info(f"Training stopped at iteration {self.iteration}")
        return TrainResult(self.model, self.log, self.optimizer.state, self.last_checkpoint)

    @staticmethod
    def _due(every: int, done: int) -> bool:
        return every > 0 and done % every == 0

    def _step(self, i: int) -> None:
        cfg = self.settings
        view = None
        if cfg.train.random_half_scale:
            view = HalfScaleView(self.dataset, self.streams.get(AUGMENT, i),
                                 self.model.backbone.spec.max_stride())
        batch = build_batch(self.dataset, cfg.sample.images_per_batch, cfg.sample.pixels_per_image,
                            cfg.sample.strategy, self.streams.get(SAMPLING, i), cfg.sample.rho, view)
        if i < cfg.sample.dump_batches and self.out_dir is not None:
            dump = self.out_dir / "batches"
            dump.mkdir(parents=True, exist_ok=True)
            batch.dump_csv(dump / f"batch_{i:05d}.csv")

        self.optimizer.zero_grad()
        with Graph(self.model.mode, check_numerics=cfg.train.check_numerics) as graph:
            outputs, targets = self.model.forward_batch(batch, RunMode.TRAIN,
                                                        self.streams.get(DROPOUT, i))
            loss = self.model.task.loss(outputs, targets)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"loss became {value}", "loss")
            graph.backward(loss)

        lr = lr_at(cfg.train.lr0, self.schedule, i)
        self.optimizer.step(lr)
        self.log.record(i, lr, value)
        self.logger.debug(f"iteration {i}: loss={value:.6f} lr={lr:.3g}")

    def _evaluate(self) -> None:
        if self.heldout is None or len(self.heldout) == 0:
            return
        task = self.settings.task
        report = evaluate_dataset(self.model, self.heldout, task.eval_scales, task.edge_thresholds,
                                  self.settings.bench.budget_scalars)
        self.log.add_metrics(report.metrics)

    def save_checkpoint(self) -> Optional[Path]:
        if self.out_dir is None:
            return None
        path = self.out_dir / CHECKPOINT_DIR
        save_checkpoint(path, self.model.state(), self.optimizer.state,
                        extra={"config": render_config(self.settings)})
        self.log.write_csv(path / LOG_FILE)
        self.last_checkpoint = path
        return path


def train(settings: ExperimentSettings, model: PixelModel, dataset, heldout=None,
          out_dir: Optional[Union[str, Path]] = None,
          resume_from: Optional[Union[str, Path]] = None) -> TrainResult:
    """Run a full training job.

    Args:
        settings: Resolved configuration (seed, schedule, sampling, mode)
        model: Freshly built or loaded model
        dataset: Training split
        heldout: Optional held-out split evaluated at ``train.eval_every`` and at the end
        out_dir: Run directory (checkpoints and CSV log); nothing is written when None
        resume_from: Checkpoint directory to continue from

    Returns:
        TrainResult with the trained model and its log
    """
    trainer = Trainer(settings, model, dataset, heldout, out_dir)
    if resume_from is not None:
        trainer.resume(resume_from)
    return trainer.run()
