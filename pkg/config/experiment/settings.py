"""Experiment settings and configuration."""

import hashlib
from dataclasses import dataclass, field, fields, replace
from functools import lru_cache
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, get_type_hints

from src.errors import ConfigError
from src.layers.backbone import PROJ, BackboneSpec


def setting(default: Any, doc: str, choices: Optional[Sequence[str]] = None,
            minimum: Optional[float] = None, maximum: Optional[float] = None,
            below: Optional[float] = None):
    """Dataclass field carrying its schema entry (doc + constraint)."""
    meta = {"doc": doc, "choices": tuple(choices) if choices else None,
            "minimum": minimum, "maximum": maximum, "below": below}
    if isinstance(default, list):
        return field(default_factory=lambda: list(default), metadata=meta)
    return field(default=default, metadata=meta)


@dataclass
class BackboneSettings:
    """Convolutional backbone architecture and initialization."""
    stages: List[Tuple[int, int]] = setting(
        [(2, 8), (2, 16), (2, 32), (2, 64)], "conv stages as <convs>x<channels>, 2x2 max pool between")
    head_channels: int = setting(128, "width of the final 1x1 conv (0 disables it)", minimum=0)
    taps: List[str] = setting(["conv1_2", "conv2_2", "conv3_2", "conv4_2", PROJ],
                              "layers concatenated into the hypercolumn")
    batch_norm: bool = setting(True, "batch norm after every conv")
    init: str = setting("gaussian", "weight source", choices=("gaussian", "checkpoint"))
    init_sigma: float = setting(0.01, "std of gaussian conv weights", minimum=0.0)
    checkpoint: str = setting("", "checkpoint directory used when init=checkpoint")

    def to_spec(self) -> BackboneSpec:
        return BackboneSpec(stages=list(self.stages), head_channels=self.head_channels,
                            tap_layers=list(self.taps), batch_norm=self.batch_norm,
                            init=self.init, init_sigma=self.init_sigma)


@dataclass
class HeadSettings:
    """Per-pixel predictor."""
    hidden: List[int] = setting([128, 128, 128], "hidden layer widths (empty = linear predictor)")
    dropout: float = setting(0.0, "dropout after each hidden activation", minimum=0.0, below=1.0)
    feature_norm: bool = setting(False, "batch-normalize hypercolumn columns before the first layer")
    init_sigma: float = setting(1e-3, "std of gaussian MLP weights", minimum=0.0)
    last_sigma: float = setting(0.0, "std of the output layer (0 = task default)", minimum=0.0)


@dataclass
class TrainSettings:
    """Optimization loop."""
    iterations: int = setting(2000, "total SGD iterations", minimum=0)
    lr0: float = setting(1e-3, "initial learning rate", minimum=0.0)
    momentum: float = setting(0.9, "SGD momentum", minimum=0.0, below=1.0)
    weight_decay: float = setting(5e-4, "L2 factor on weights", minimum=0.0)
    schedule: str = setting("auto", "iter:mult,... milestones; auto = two x0.1 steps; empty = constant")
    seed: int = setting(0, "root seed for every random stream", minimum=0)
    mode: str = setting("standard", "scalar precision", choices=("standard", "verification"))
    eval_every: int = setting(0, "held-out evaluation cadence (0 = at the end only)", minimum=0)
    checkpoint_every: int = setting(0, "checkpoint cadence (0 = at the end only)", minimum=0)
    random_half_scale: bool = setting(False, "resize each training image to 0.5x with probability 1/2")
    check_numerics: bool = setting(False, "raise on non-finite values and gradients")


@dataclass
class SampleSettings:
    """Mini-batch construction."""
    images_per_batch: int = setting(5, "M, images per batch", minimum=1)
    pixels_per_image: int = setting(256, "N, pixels sampled per image", minimum=1)
    strategy: str = setting("uniform", "pixel sampler", choices=("uniform", "biased"))
    rho: float = setting(0.5, "positive fraction for biased sampling", minimum=0.0, maximum=1.0)
    dump_batches: int = setting(0, "write the first K pixel batches as CSV", minimum=0)


@dataclass
class TaskSettings:
    """Dataset and evaluation."""
    kind: str = setting("segmentation", "task", choices=("segmentation", "normals", "edges"))
    size: int = setting(32, "image height and width", minimum=16)
    num_classes: int = setting(4, "segmentation classes K", minimum=2)
    train_images: int = setting(200, "generated training images", minimum=0)
    heldout_images: int = setting(50, "generated held-out images", minimum=0)
    edge_rate: float = setting(0.05, "target edge positive rate", minimum=0.0, maximum=1.0)
    data_dir: str = setting("data", "root directory for generated datasets")
    eval_scales: List[float] = setting([1.0], "inference scales averaged at evaluation")
    edge_thresholds: int = setting(99, "thresholds swept for edge F-measure", minimum=1)


@dataclass
class BenchSettings:
    """Benchmarks and ablations."""
    mode: str = setting("sampled", "hypercolumn pipeline",
                        choices=("dense_upsample", "masked_dense", "sampled"))
    iterations: int = setting(20, "timed iterations", minimum=0)
    warmup: int = setting(5, "untimed warmup iterations", minimum=0)
    budget_scalars: int = setting(1 << 26, "largest hypercolumn matrix materialized", minimum=1)
    ablation: str = setting("sampling_fraction", "ablation grid",
                            choices=("sampling_fraction", "diversity", "bias_rho", "mlp_width",
                                     "multiscale", "linear_vs_mlp", "taps", "batch_norm"))
    seeds: int = setting(5, "seeds per grid point", minimum=1)
    ablation_iterations: int = setting(0, "training budget per ablation run (0 = train.iterations)",
                                       minimum=0)


SECTIONS = {
    "backbone": BackboneSettings,
    "head": HeadSettings,
    "train": TrainSettings,
    "sample": SampleSettings,
    "task": TaskSettings,
    "bench": BenchSettings,
}


@dataclass(frozen=True)
class KeySchema:
    """One documented configuration key."""
    key: str
    section: str
    name: str
    type: Any
    default: Any
    doc: str
    choices: Optional[Tuple[str, ...]]
    minimum: Optional[float]
    maximum: Optional[float]
    below: Optional[float]

    def check(self, value: Any) -> Optional[str]:
        """Return a violation message, or None when ``value`` is allowed."""
        if self.choices and value not in self.choices:
            return f"{self.key} must be one of {', '.join(self.choices)}"
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            if self.minimum is not None and value < self.minimum:
                return f"{self.key} must be >= {self.minimum}"
            if self.maximum is not None and value > self.maximum:
                return f"{self.key} must be <= {self.maximum}"
            if self.below is not None and value >= self.below:
                return f"{self.key} must be < {self.below}"
        return None


@lru_cache(maxsize=None)
def schema() -> Dict[str, KeySchema]:
    """Every key, in section then field order."""
    keys = {}
    for section, cls in SECTIONS.items():
        hints = get_type_hints(cls)
        defaults = cls()
        for f in fields(cls):
            key = f"{section}.{f.name}"
            keys[key] = KeySchema(key=key, section=section, name=f.name, type=hints[f.name],
                                  default=getattr(defaults, f.name), doc=f.metadata["doc"],
                                  choices=f.metadata["choices"], minimum=f.metadata["minimum"],
                                  maximum=f.metadata["maximum"], below=f.metadata["below"])
    return keys


class ExperimentSettings:
    """Main settings container."""

    def __init__(self):
        self.backbone = BackboneSettings()
        self.head = HeadSettings()
        self.train = TrainSettings()
        self.sample = SampleSettings()
        self.task = TaskSettings()
        self.bench = BenchSettings()

    def __eq__(self, other) -> bool:
        return isinstance(other, ExperimentSettings) and self.to_dict() == other.to_dict()

    def __repr__(self) -> str:
        return f"ExperimentSettings({self.to_dict()!r})"

    def items(self) -> Iterator[Tuple[str, Any]]:
        """(dotted key, value) pairs in schema order."""
        for key, entry in schema().items():
            yield key, getattr(getattr(self, entry.section), entry.name)

    def get(self, key: str) -> Any:
        section, name = self._split(key)
        return getattr(getattr(self, section), name)

    def set(self, key: str, value: Any) -> None:
        section, name = self._split(key)
        setattr(self, section, replace(getattr(self, section), **{name: value}))

    def _split(self, key: str) -> Tuple[str, str]:
        if key not in schema():
            raise ConfigError(f"unknown key {key!r}")
        section, name = key.split(".", 1)
        return section, name

    def copy(self) -> "ExperimentSettings":
        clone = ExperimentSettings()
        for key, value in self.items():
            clone.set(key, list(value) if isinstance(value, list) else value)
        return clone

    def digest(self) -> str:
        """Stable hash of the rendered configuration."""
        from config.experiment.parser import render_config
        return hashlib.sha256(render_config(self).encode("utf-8")).hexdigest()[:16]

    def validate(self) -> "ExperimentSettings":
        """Cross-key checks that a single key's constraint cannot express."""
        from src.engine.schedule import parse_schedule
        spec = self.backbone.to_spec()
        if self.task.size % spec.max_stride():
            raise ConfigError(f"task.size={self.task.size} is not divisible by the backbone "
                              f"stride {spec.max_stride()}")
        if self.backbone.init == "checkpoint" and not self.backbone.checkpoint:
            raise ConfigError("backbone.init=checkpoint needs backbone.checkpoint")
        if self.sample.pixels_per_image > self.task.size ** 2:
            raise ConfigError(f"sample.pixels_per_image exceeds the {self.task.size ** 2} pixels "
                              "of an image")
        if self.sample.strategy == "biased" and self.task.kind != "edges":
            raise ConfigError("biased sampling needs binary targets (task.kind=edges)")
        if any(s <= 0 for s in self.task.eval_scales) or not self.task.eval_scales:
            raise ConfigError("task.eval_scales must be positive and non-empty")
        parse_schedule(self.train.schedule, self.train.iterations)
        return self

    def to_dict(self) -> dict:
        """Convert settings to dictionary."""
        return {
            "backbone": self.backbone.__dict__,
            "head": self.head.__dict__,
            "train": self.train.__dict__,
            "sample": self.sample.__dict__,
            "task": self.task.__dict__,
            "bench": self.bench.__dict__,
        }
