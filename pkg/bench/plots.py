"""SVG charts for training runs and ablation summaries."""

from pathlib import Path
from typing import List, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402
import seaborn as sns  # noqa: E402

from bench.ablation import OK, RUNS_DIR  # noqa: E402

PathLike = Union[str, Path]


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def plot_loss_curves(curves: pd.DataFrame, path: PathLike, title: str = "") -> Path:
    """Median loss per iteration for every grid point.

    Args:
        curves: Long-form frame with ``iteration``, ``loss`` and ``point`` columns
        path: Output ``.svg``
        title: Chart title
    """
    sns.set_theme(style="darkgrid")
    fig, ax = plt.subplots(figsize=(6, 4))
    sns.lineplot(data=curves, x="iteration", y="loss", hue="point", estimator="median",
                 errorbar=None, ax=ax)
    ax.set_title(title)
    return _save(fig, Path(path))


def plot_metric_by_point(results: pd.DataFrame, metric: str, path: PathLike,
                         title: str = "") -> Path:
    """Per-seed values and their median against the grid point."""
    sns.set_theme(style="darkgrid")
    fig, ax = plt.subplots(figsize=(6, 4))
    order = list(dict.fromkeys(results["point"]))
    sns.stripplot(data=results, x="point", y=metric, order=order, color="0.4", alpha=0.6, ax=ax)
    sns.pointplot(data=results, x="point", y=metric, order=order, estimator="median",
                  errorbar=None, ax=ax)
    ax.set_xlabel("")
    ax.set_title(title)
    return _save(fig, Path(path))


def plot_ablation(name: str, results: pd.DataFrame, out_dir: PathLike) -> List[Path]:
    """Loss curves and headline metric of one ablation's successful runs."""
    out_dir = Path(out_dir)
    ok = results[results["status"] == OK]
    frames = []
    for _, row in ok.iterrows():
        log = out_dir / RUNS_DIR / f"{row['config_hash']}.csv"
        if log.exists():
            frames.append(pd.read_csv(log).assign(point=row["point"], seed=row["seed"]))
    files = []
    if frames:
        files.append(plot_loss_curves(pd.concat(frames, ignore_index=True),
                                      out_dir / f"{name}_loss.svg", title=name))
    metric = ok["headline"].iloc[0]
    files.append(plot_metric_by_point(ok, "headline_value", out_dir / f"{name}_{metric}.svg",
                                      title=f"{name}: {metric}"))
    return files
