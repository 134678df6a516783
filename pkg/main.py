#!/usr/bin/env python3
"""
hypercol - Main Entry Point
Sparse hypercolumn pixel prediction: data generation, training, evaluation and benchmarks.
"""

import functools
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import click  # noqa: E402
import pandas as pd  # noqa: E402

from config.experiment.parser import apply_overrides, load_config, parse_config, render_config  # noqa: E402
from config.experiment.settings import ExperimentSettings  # noqa: E402
from src.errors import HypercolError  # noqa: E402

CONFIG_ECHO = "config.cfg"
GRAD_CHECK_TOLERANCE = 1e-5
GRAD_CHECK_SIGMA = 0.1


def setup_logging(out_dir: Path, verbose: bool = False) -> None:
    """Configure logging for the application."""
    out_dir.mkdir(parents=True, exist_ok=True)
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(out_dir / 'run.log'),
            logging.StreamHandler(sys.stdout)
        ],
        force=True,
    )


def command(fn):
    """Run a subcommand with logging set up and errors reported on one stderr line."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        ctx = click.get_current_context()
        out = Path(kwargs["out"] or f"runs/{ctx.info_name}")
        kwargs["out"] = out
        setup_logging(out, ctx.obj.get("verbose", False))
        logger = logging.getLogger(__name__)
        try:
            return fn(*args, **kwargs)
        except HypercolError as e:
            logger.error(f"{ctx.info_name} failed: {e}")
            click.echo(f"error kind={e.kind} message={' '.join(str(e).split())}", err=True)
            sys.exit(2)
        except Exception as e:
            logger.error(f"{ctx.info_name} crashed: {e}", exc_info=True)
            click.echo(f"error kind=internal message={' '.join(str(e).split())}", err=True)
            sys.exit(1)
    return wrapper


def config_options(fn):
    fn = click.option("--out", type=click.Path(file_okay=False), default=None,
                      help="Run directory (default: runs/<command>)")(fn)
    fn = click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                      help="Override a config key; repeatable, wins over the file")(fn)
    fn = click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                      help="key = value config file")(fn)
    return fn


def resolve(config_path: Optional[str], overrides: Sequence[str], out: Path) -> ExperimentSettings:
    """Load the configuration and echo it into the run directory."""
    settings = load_config(config_path, overrides)
    (out / CONFIG_ECHO).write_text(render_config(settings))
    logging.getLogger(__name__).info(f"Config {settings.digest()} written to {out / CONFIG_ECHO}")
    return settings


def dataset_dir(settings: ExperimentSettings, split: str) -> Path:
    return Path(settings.task.data_dir) / settings.task.kind / split


def load_split(settings: ExperimentSettings, split: str):
    from tasks.synthetic.dataset import SyntheticDataset
    command_hint = f"python main.py gen-data --set task.kind={settings.task.kind}"
    if settings.task.data_dir != "data":
        command_hint += f" --set task.data_dir={settings.task.data_dir}"
    return SyntheticDataset.load(dataset_dir(settings, split), command=command_hint)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log per-iteration detail")
@click.pass_context
def cli(ctx, verbose):
    """Sparse hypercolumn pixel prediction."""
    ctx.ensure_object(dict)
    ctx.obj["verbose"] = verbose


@cli.command("gen-data")
@config_options
@command
def gen_data(config_path, overrides, out):
    """Generate the train and held-out splits of the configured task."""
    from tasks.synthetic.generators import generate_splits
    settings = resolve(config_path, overrides, out)
    task = settings.task
    train_set, heldout = generate_splits(task.kind, settings.train.seed, task.train_images,
                                         task.heldout_images, task.size, task.num_classes,
                                         task.edge_rate)
    train_set.save(dataset_dir(settings, "train"))
    heldout.save(dataset_dir(settings, "heldout"))


@cli.command()
@config_options
@click.option("--resume", type=click.Path(file_okay=False), default=None,
              help="Checkpoint directory to continue from")
@command
def train(config_path, overrides, out, resume):
    """Train a model on the generated training split."""
    from src.engine.model import build_model
    from src.engine.trainer import train as run_training
    settings = resolve(config_path, overrides, out)
    train_set = load_split(settings, "train")
    heldout = None
    if (dataset_dir(settings, "heldout")).exists():
        heldout = load_split(settings, "heldout")
    model = build_model(settings)
    result = run_training(settings, model, train_set, heldout, out_dir=out, resume_from=resume)
    losses = result.log.losses()
    if len(losses):
        click.echo(f"final_loss={losses[-1]:.6g} iterations={result.state.iteration}")


@cli.command("eval")
@config_options
@click.option("--checkpoint", type=click.Path(file_okay=False), default="runs/train/checkpoint",
              show_default=True, help="Checkpoint directory to evaluate")
@click.option("--export-predictions", is_flag=True, help="Write one PXT1 map per image")
@command
def evaluate(config_path, overrides, out, checkpoint, export_predictions):
    """Score a checkpoint on the held-out split.

    Without --config the configuration stored in the checkpoint is used.
    """
    from src.engine.checkpoint import load_checkpoint
    from src.engine.model import build_model
    from src.inference.evaluate import evaluate_dataset
    arrays, _, manifest = load_checkpoint(checkpoint)
    if config_path is None and manifest.get("config"):
        settings = apply_overrides(parse_config(manifest["config"]), overrides).validate()
        (out / CONFIG_ECHO).write_text(render_config(settings))
    else:
        settings = resolve(config_path, overrides, out)
    heldout = load_split(settings, "heldout")
    model = build_model(settings)
    model.load_state(arrays)
    task = settings.task
    report = evaluate_dataset(model, heldout, task.eval_scales, task.edge_thresholds,
                              settings.bench.budget_scalars,
                              export_dir=out / "predictions" if export_predictions else None)
    pd.DataFrame([report.metrics]).to_csv(out / "eval.csv", index=False, float_format="%.17g")
    report.per_image.to_csv(out / "per_image.csv", index=False)
    click.echo(" ".join(f"{k}={v:.6g}" for k, v in report.metrics.items()))


@cli.command()
@config_options
@command
def bench(config_path, overrides, out):
    """Memory accounting for every pipeline and measured updates per second."""
    from bench.memory import MODES, account_memory
    from bench.throughput import measure_throughput
    from src.autodiff.tensor import ScalarMode
    from src.errors import ResourceError
    from src.heads.task import TaskHead, TaskKind
    logger = logging.getLogger(__name__)
    settings = resolve(config_path, overrides, out)
    spec = settings.backbone.to_spec()
    size = (settings.task.size, settings.task.size)
    task = TaskHead(TaskKind(settings.task.kind), num_classes=settings.task.num_classes)
    widths = [*settings.head.hidden, task.num_outputs]
    memory_rows, speed_rows = [], []
    for mode in MODES:
        report = account_memory(mode, spec, size, settings.sample.images_per_batch,
                                settings.sample.pixels_per_image, widths,
                                ScalarMode(settings.train.mode))
        memory_rows.append({"mode": mode, "peak_scalars": report.peak_scalars,
                            "bytes": report.bytes_at_mode, **report.stages})
        try:
            speed = measure_throughput(mode, settings, settings.bench.iterations)
            speed_rows.append({**speed.as_row(), "status": "ok"})
        except ResourceError as e:
            logger.warning(f"{mode} is infeasible: {e}")
            speed_rows.append({"mode": mode, "status": "infeasible", "required": e.required,
                               "budget": e.budget})
    pd.DataFrame(memory_rows).to_csv(out / "memory.csv", index=False)
    pd.DataFrame(speed_rows).to_csv(out / "throughput.csv", index=False)
    for row in speed_rows:
        ups = row.get("updates_per_second")
        click.echo(f"{row['mode']}: " + (f"{ups:.3f} updates/s" if ups is not None else row["status"]))


@cli.command("grad-check")
@config_options
@click.option("--max-per-param", type=int, default=3, show_default=True,
              help="Scalars checked per parameter tensor (0 = all)")
@click.option("--pixels", type=int, default=20, show_default=True,
              help="Pixels sampled from the checked image")
@command
def grad_check_command(config_path, overrides, out, max_per_param, pixels):
    """Finite-difference check of the full model's gradients in verification mode.

    The configured architecture is rebuilt with gaussian weights of std 0.1
    so every gradient is well above finite-difference noise; the step is 1e-5.
    """
    from src.engine.gradients import pipeline_grad_check
    settings = resolve(config_path, [*overrides, "train.mode=verification",
                                     f"backbone.init_sigma={GRAD_CHECK_SIGMA}",
                                     f"head.init_sigma={GRAD_CHECK_SIGMA}",
                                     f"head.last_sigma={GRAD_CHECK_SIGMA}"], out)
    report = pipeline_grad_check(settings, pixels=pixels, max_per_param=max_per_param or None)
    click.echo(f"max_rel_err={report.max_rel_err:.3e} worst={report.worst_param} "
               f"checked={report.checked}")
    if not report.passed(GRAD_CHECK_TOLERANCE):
        sys.exit(1)


@cli.command()
@config_options
@click.option("--name", default=None, help="Registered grid (default: bench.ablation)")
@click.option("--seeds", type=int, default=None, help="Seeds per grid point (default: bench.seeds)")
@command
def ablate(config_path, overrides, out, name, seeds):
    """Train and evaluate every point of a registered ablation grid."""
    from bench.ablation import run_ablation
    settings = resolve(config_path, overrides, out)
    name = name or settings.bench.ablation
    report = run_ablation(name, settings, out, seeds=seeds)
    click.echo(report.summary.to_string(index=False))


def main():
    cli(obj={})


if __name__ == "__main__":
    main()
