"""Scripted ablations: train + evaluate every grid point for several seeds.

Results go to an append-only CSV keyed by the resolved configuration's
hash, so rerunning a grid reuses finished rows and reproduces the same
summary.
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from config.experiment.settings import ExperimentSettings
from src.engine.model import build_model
from src.engine.trainer import TrainLog, train
from src.errors import ConfigError
from src.inference.evaluate import HEADLINE, evaluate_dataset
from src.layers.backbone import PROJ
from tasks.synthetic.generators import EDGES, generate_splits

PathLike = Union[str, Path]

OK = "ok"
FAILED = "failed"
RUNS_DIR = "runs"
TEXT_COLUMNS = ("ablation", "point", "config_hash", "status", "error", "headline")


@dataclass(frozen=True)
class GridPoint:
    """One configuration of an ablation, as key overrides on the base settings."""
    label: str
    overrides: Tuple[Tuple[str, Any], ...]

    def apply(self, settings: ExperimentSettings) -> ExperimentSettings:
        result = settings.copy()
        for key, value in self.overrides:
            result.set(key, value)
        return result


def _point(label: str, **overrides: Any) -> GridPoint:
    return GridPoint(label, tuple((k.replace("__", "."), v) for k, v in overrides.items()))


def sampling_fraction_grid(settings: ExperimentSettings) -> List[GridPoint]:
    pixels = settings.task.size ** 2
    return [_point(f"{round(100 * f)}%", sample__pixels_per_image=max(1, round(f * pixels)))
            for f in (1.0, 0.25, 0.04)]


def diversity_grid(settings: ExperimentSettings) -> List[GridPoint]:
    # M x N against 1 x M*N: equal pixels per update, fewer images
    M, N = settings.sample.images_per_batch, settings.sample.pixels_per_image
    stride = settings.backbone.to_spec().max_stride()
    size = settings.task.size
    while size * size < M * N:
        size += stride
    return [_point(f"{M}x{N}", sample__images_per_batch=M, sample__pixels_per_image=N,
                   task__size=size),
            _point(f"1x{M * N}", sample__images_per_batch=1, sample__pixels_per_image=M * N,
                   task__size=size)]


def bias_rho_grid(settings: ExperimentSettings) -> List[GridPoint]:
    points = [_point("uniform", task__kind=EDGES, sample__strategy="uniform")]
    points += [_point(f"rho={rho}", task__kind=EDGES, sample__strategy="biased", sample__rho=rho)
               for rho in (0.25, 0.5, 0.75)]
    return points


def mlp_width_grid(settings: ExperimentSettings) -> List[GridPoint]:
    return [_point(f"{w}x3", head__hidden=[w, w, w]) for w in (32, 64, 128)]


def multiscale_grid(settings: ExperimentSettings) -> List[GridPoint]:
    return [_point("1", task__eval_scales=[1.0]),
            _point("0.5+1", task__eval_scales=[0.5, 1.0]),
            _point("0.5+1+2", task__eval_scales=[0.5, 1.0, 2.0])]


def linear_vs_mlp_grid(settings: ExperimentSettings) -> List[GridPoint]:
    hidden = list(settings.head.hidden) or [128, 128, 128]
    return [_point("linear", head__hidden=[], head__feature_norm=False),
            _point("linear_bn", head__hidden=[], head__feature_norm=True),
            _point("mlp", head__hidden=hidden, head__feature_norm=False)]


def taps_grid(settings: ExperimentSettings) -> List[GridPoint]:
    taps = list(settings.backbone.taps)
    with_proj = taps if PROJ in taps else taps + [PROJ]
    channels = settings.backbone.head_channels or 128
    return [_point("with_proj", backbone__taps=with_proj, backbone__head_channels=channels),
            _point("without_proj", backbone__taps=[t for t in taps if t != PROJ])]


def batch_norm_grid(settings: ExperimentSettings) -> List[GridPoint]:
    return [_point("bn", backbone__batch_norm=True), _point("no_bn", backbone__batch_norm=False)]


GRIDS: Dict[str, Callable[[ExperimentSettings], List[GridPoint]]] = {
    "sampling_fraction": sampling_fraction_grid,
    "diversity": diversity_grid,
    "bias_rho": bias_rho_grid,
    "mlp_width": mlp_width_grid,
    "multiscale": multiscale_grid,
    "linear_vs_mlp": linear_vs_mlp_grid,
    "taps": taps_grid,
    "batch_norm": batch_norm_grid,
}


def registered_grid(name: str, settings: ExperimentSettings) -> List[GridPoint]:
    if name not in GRIDS:
        raise ConfigError(f"no registered ablation grid {name!r}; known: {', '.join(GRIDS)}")
    return GRIDS[name](settings)


@dataclass
class RunOutcome:
    losses: np.ndarray
    metrics: Dict[str, float]
    headline: str


Runner = Callable[[ExperimentSettings], RunOutcome]


def train_and_evaluate(settings: ExperimentSettings) -> RunOutcome:
    """Generate the task's splits, train from scratch and score the held-out split."""
    task = settings.task
    train_set, heldout = generate_splits(task.kind, settings.train.seed, task.train_images,
                                         task.heldout_images, task.size, task.num_classes,
                                         task.edge_rate)
    model = build_model(settings)
    result = train(settings, model, train_set)
    report = evaluate_dataset(model, heldout, task.eval_scales, task.edge_thresholds,
                              settings.bench.budget_scalars)
    return RunOutcome(result.log.losses(), report.metrics, HEADLINE[report.kind])


def final_loss(losses: np.ndarray) -> float:
    """Mean over the last tenth of training (at least one iteration)."""
    if len(losses) == 0:
        return float("nan")
    tail = max(1, len(losses) // 10)
    return float(np.mean(losses[-tail:]))


class ResultCache:
    """Rows of finished runs keyed by config hash; rows are never modified."""

    def __init__(self, path: PathLike):
        self.path = Path(path)
        self.rows: List[dict] = []
        if self.path.exists():
            frame = pd.read_csv(self.path, dtype={c: str for c in TEXT_COLUMNS})
            if "error" in frame:
                frame["error"] = frame["error"].fillna("")
            self.rows = frame.to_dict(orient="records")

    def get(self, config_hash: str) -> Optional[dict]:
        for row in self.rows:
            if row["config_hash"] == config_hash and row["status"] == OK:
                return row
        return None

    def append(self, row: dict) -> None:
        self.rows.append(row)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(self.rows).to_csv(self.path, index=False, float_format="%.17g")


def summarize(frame: pd.DataFrame) -> pd.DataFrame:
    """Median of every numeric column per grid point, over successful runs."""
    if frame.empty:
        return pd.DataFrame(columns=["point", "runs", "failed"])
    points = list(dict.fromkeys(frame["point"]))
    ok = frame[frame["status"] == OK]
    numeric = [c for c in ok.columns
               if c not in ("seed", "runtime_s", "error") and pd.api.types.is_numeric_dtype(ok[c])]
    rows = []
    for point in points:
        runs = ok[ok["point"] == point]
        row = {"point": point, "runs": len(runs),
               "failed": int(((frame["point"] == point) & (frame["status"] != OK)).sum())}
        row.update({c: float(runs[c].median()) for c in numeric} if len(runs) else {})
        rows.append(row)
    return pd.DataFrame(rows)


@dataclass
class AblationReport:
    name: str
    results: pd.DataFrame
    summary: pd.DataFrame
    files: List[Path] = field(default_factory=list)


class AblationRunner:
    """Runs one registered grid over seeds, reusing cached rows."""

    def __init__(self, settings: ExperimentSettings, out_dir: PathLike,
                 runner: Runner = train_and_evaluate, plots: bool = True):
        self.settings = settings
        self.out_dir = Path(out_dir)
        self.runner = runner
        self.plots = plots
        self.logger = logging.getLogger(__name__)

    def configure(self, point: GridPoint, seed: int) -> ExperimentSettings:
        cfg = point.apply(self.settings)
        cfg.set("train.seed", seed)
        if self.settings.bench.ablation_iterations > 0:
            cfg.set("train.iterations", self.settings.bench.ablation_iterations)
        return cfg.validate()

    def _run_one(self, name: str, point: GridPoint, seed: int,
                 cfg: ExperimentSettings, config_hash: str) -> dict:
        row = {"ablation": name, "point": point.label, "seed": seed, "config_hash": config_hash}
        start = time.perf_counter()
        try:
            outcome = self.runner(cfg)
        except Exception as e:
            self.logger.error(f"{name} {point.label} seed {seed} failed: {e}", exc_info=True)
            row.update({"status": FAILED, "error": f"{type(e).__name__}: {e}",
                        "runtime_s": time.perf_counter() - start})
            return row
        row.update({"status": OK, "error": "", "runtime_s": time.perf_counter() - start,
                    "final_loss": final_loss(outcome.losses), "headline": outcome.headline,
                    "headline_value": float(outcome.metrics[outcome.headline])})
        row.update({f"metric_{k}": float(v) for k, v in outcome.metrics.items()})
        curve = TrainLog()
        for i, loss in enumerate(outcome.losses):
            curve.record(i, float("nan"), float(loss))
        runs = self.out_dir / RUNS_DIR
        runs.mkdir(parents=True, exist_ok=True)
        curve.to_frame()[["iteration", "loss"]].to_csv(runs / f"{config_hash}.csv", index=False,
                                                       float_format="%.17g")
        return row

    def run(self, name: str, seeds: Optional[int] = None,
            grid: Optional[List[GridPoint]] = None) -> AblationReport:
        """Train and evaluate ``grid`` (default: the registered one) for each seed.

        Args:
            name: Ablation name, used for file names and (without ``grid``) the grid lookup
            seeds: Seeds per point (defaults to ``bench.seeds``); seeds count up from train.seed
            grid: Explicit grid points

        Returns:
            AblationReport with one row per run and the per-point medians
        """
        grid = grid if grid is not None else registered_grid(name, self.settings)
        seeds = self.settings.bench.seeds if seeds is None else seeds
        cache = ResultCache(self.out_dir / f"{name}.csv")
        rows = []
        self.logger.info(f"Ablation {name}: {len(grid)} points x {seeds} seeds")
        for point in grid:
            for s in range(seeds):
                seed = self.settings.train.seed + s
                cfg = self.configure(point, seed)
                config_hash = cfg.digest()
                row = cache.get(config_hash)
                if row is None:
                    row = self._run_one(name, point, seed, cfg, config_hash)
                    cache.append(row)
                else:
                    self.logger.info(f"{name} {point.label} seed {seed}: cached")
                rows.append(row)

        results = pd.DataFrame(rows)
        summary = summarize(results)
        files = [cache.path, self.out_dir / f"{name}_summary.csv"]
        summary.to_csv(files[1], index=False, float_format="%.17g")
        if self.plots and (results["status"] == OK).any():
            from bench.plots import plot_ablation
            files += plot_ablation(name, results, self.out_dir)
        self.logger.info(f"Ablation {name} done: {int((results['status'] == OK).sum())} ok, "
                         f"{int((results['status'] != OK).sum())} failed")
        return AblationReport(name, results, summary, files)


def run_ablation(name: str, settings: ExperimentSettings, out_dir: PathLike,
                 grid: Optional[List[GridPoint]] = None, seeds: Optional[int] = None,
                 runner: Runner = train_and_evaluate) -> AblationReport:
    return AblationRunner(settings, out_dir, runner).run(name, seeds, grid)
