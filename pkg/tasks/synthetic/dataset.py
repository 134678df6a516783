"""In-memory synthetic datasets and their on-disk form (YAML manifest + PXT1 files)."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
import yaml

from src.errors import CorruptionError, DatasetMissingError
from utils.data.pxt_format import read_tensor, write_tensor

logger = logging.getLogger(__name__)

MANIFEST = "manifest.yaml"
FORMAT = "hypercol-dataset/1"
INTEGER_TARGETS = ("segmentation", "edges")

PathLike = Union[str, Path]


@dataclass
class SyntheticDataset:
    """Images [C x H x W] and per-pixel targets with their provenance.

    Segmentation targets are int label maps [H x W] (255 = ignore), normals
    are unit vectors [3 x H x W] and edges are binary maps [H x W].
    """
    generator: str
    images: List[np.ndarray] = field(default_factory=list)
    targets: List[np.ndarray] = field(default_factory=list)
    seed: int = 0
    params: dict = field(default_factory=dict)
    split: str = "train"

    @classmethod
    def from_items(cls, generator: str, items: Sequence[Tuple[np.ndarray, np.ndarray]], seed: int,
                   params: dict, split: str = "train") -> "SyntheticDataset":
        return cls(generator, [img for img, _ in items], [tgt for _, tgt in items], seed,
                   dict(params), split)

    def __len__(self) -> int:
        return len(self.images)

    def item(self, index: int) -> Tuple[np.ndarray, np.ndarray]:
        return self.images[index], self.targets[index]

    def positive_rate(self) -> float:
        """Fraction of positive pixels (edge datasets)."""
        if not self.targets:
            return 0.0
        return float(np.mean([np.mean(t > 0) for t in self.targets]))

    def manifest(self) -> dict:
        entries = [{"image": f"images/{i:05d}.pxt", "target": f"targets/{i:05d}.pxt"}
                   for i in range(len(self))]
        manifest = {"format": FORMAT, "generator": self.generator, "seed": int(self.seed),
                    "split": self.split, "count": len(self), "params": self.params,
                    "items": entries}
        if self.generator == "edges":
            manifest["positive_rate"] = self.positive_rate()
        return manifest

    def save(self, path: PathLike) -> Path:
        """Write the dataset directory."""
        path = Path(path)
        (path / "images").mkdir(parents=True, exist_ok=True)
        (path / "targets").mkdir(parents=True, exist_ok=True)
        manifest = self.manifest()
        for entry, image, target in zip(manifest["items"], self.images, self.targets):
            write_tensor(path / entry["image"], np.asarray(image, dtype=np.float64))
            write_tensor(path / entry["target"], np.asarray(target, dtype=np.float64))
        with open(path / MANIFEST, "w") as f:
            yaml.safe_dump(manifest, f, sort_keys=False)
        logger.info(f"Saved {len(self)} {self.generator} images ({self.split}) to {path}")
        return path

    @classmethod
    def load(cls, path: PathLike, command: str = "python main.py gen-data") -> "SyntheticDataset":
        """Read a dataset directory.

        Raises:
            DatasetMissingError: When no manifest exists, naming ``command``
            CorruptionError: When the manifest and files disagree
        """
        path = Path(path)
        if not (path / MANIFEST).exists():
            raise DatasetMissingError(str(path), command)
        with open(path / MANIFEST) as f:
            manifest = yaml.safe_load(f) or {}
        if manifest.get("format") != FORMAT:
            raise CorruptionError(f"unexpected dataset format {manifest.get('format')!r}",
                                  str(path / MANIFEST))
        items = manifest.get("items") or []
        if len(items) != manifest.get("count", len(items)):
            raise CorruptionError("manifest count does not match its item list", str(path))
        integer = manifest["generator"] in INTEGER_TARGETS
        images, targets = [], []
        for entry in items:
            images.append(read_tensor(path / entry["image"]))
            target = read_tensor(path / entry["target"])
            targets.append(target.astype(np.int64) if integer else target)
        return cls(manifest["generator"], images, targets, int(manifest.get("seed", 0)),
                   dict(manifest.get("params") or {}), manifest.get("split", "train"))
