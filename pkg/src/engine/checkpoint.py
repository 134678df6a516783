"""Checkpoint persistence: a directory of PXT1 tensors plus a YAML manifest."""

import logging
import os
import shutil
from pathlib import Path
from typing import Dict, Mapping, Tuple, Union

import numpy as np
import yaml

from src.autodiff.tensor import Tensor
from src.engine.optimizer import OptimState
from src.errors import CorruptionError
from utils.data.pxt_format import read_tensor, write_tensor

logger = logging.getLogger(__name__)

MANIFEST = "manifest.yaml"
FORMAT = "hypercol-checkpoint/1"

PathLike = Union[str, Path]


def _as_arrays(tensors: Mapping[str, Union[Tensor, np.ndarray]]) -> Dict[str, np.ndarray]:
    return {k: (v.data if isinstance(v, Tensor) else np.asarray(v)) for k, v in tensors.items()}


def _staging(path: Path, suffix: str) -> Path:
    return path.with_name(f".{path.name}.{suffix}")


def save_checkpoint(path: PathLike, tensors: Mapping[str, Union[Tensor, np.ndarray]],
                    state: OptimState, extra: Mapping = None) -> Path:
    """Write parameters, momentum buffers and counters.

    Everything is written to a hidden sibling directory first and swapped
    into place, so an interrupted save leaves the previous checkpoint intact.

    Args:
        path: Checkpoint directory (created if needed)
        tensors: Name -> parameter or running statistic
        state: Optimizer state
        extra: Additional manifest entries (e.g. the resolved config)

    Returns:
        The checkpoint directory
    """
    path = Path(path)
    partial = _staging(path, "partial")
    if partial.exists():
        shutil.rmtree(partial)
    (partial / "params").mkdir(parents=True)
    (partial / "velocity").mkdir(parents=True)

    def entries(arrays: Dict[str, np.ndarray], folder: str):
        listed = []
        for name, array in arrays.items():
            rel = f"{folder}/{name}.pxt"
            write_tensor(partial / rel, array)
            listed.append({"name": name, "file": rel, "shape": list(array.shape),
                           "dtype": str(array.dtype)})
        return listed

    manifest = {
        "format": FORMAT,
        "iteration": int(state.iteration),
        "epoch": int(state.epoch),
        "tensors": entries(_as_arrays(tensors), "params"),
        "velocity": entries(dict(state.velocity), "velocity"),
    }
    if extra:
        manifest.update(dict(extra))
    with open(partial / MANIFEST, "w") as f:
        yaml.safe_dump(manifest, f, sort_keys=False)

    previous = _staging(path, "previous")
    if previous.exists():
        shutil.rmtree(previous)
    if path.exists():
        os.replace(path, previous)
    os.replace(partial, path)
    if previous.exists():
        shutil.rmtree(previous)
    logger.info(f"Checkpoint written to {path} at iteration {state.iteration}")
    return path


def _read_entries(root: Path, entries) -> Dict[str, np.ndarray]:
    arrays = {}
    for entry in entries or []:
        name = entry["name"]
        file = root / entry["file"]
        if not file.exists():
            raise CorruptionError(f"tensor file {entry['file']} is missing", name)
        array = read_tensor(file)
        if list(array.shape) != list(entry["shape"]):
            raise CorruptionError(
                f"stored shape {list(array.shape)} does not match manifest {entry['shape']}", name)
        arrays[name] = array
    return arrays


def load_manifest(path: PathLike) -> dict:
    """Parse a checkpoint manifest, validating its format tag."""
    file = Path(path) / MANIFEST
    if not file.exists():
        raise CorruptionError("checkpoint manifest is missing", str(file))
    with open(file) as f:
        manifest = yaml.safe_load(f) or {}
    if manifest.get("format") != FORMAT:
        raise CorruptionError(f"unexpected checkpoint format {manifest.get('format')!r}", str(file))
    return manifest


def load_checkpoint(path: PathLike) -> Tuple[Dict[str, np.ndarray], OptimState, dict]:
    """Read a checkpoint directory.

    Returns:
        (name -> array, optimizer state, manifest)

    Raises:
        CorruptionError: If the manifest and the tensor files disagree
    """
    root = Path(path)
    manifest = load_manifest(root)
    arrays = _read_entries(root, manifest.get("tensors"))
    velocity = _read_entries(root, manifest.get("velocity"))
    state = OptimState(velocity=velocity, iteration=int(manifest.get("iteration", 0)),
                       epoch=int(manifest.get("epoch", 0)))
    return arrays, state, manifest


def restore_into(tensors: Mapping[str, Tensor], arrays: Mapping[str, np.ndarray]) -> None:
    """Copy stored arrays into live tensors of the same names."""
    for name, tensor in tensors.items():
        if name not in arrays:
            raise CorruptionError("tensor absent from checkpoint", name)
        value = arrays[name]
        if value.shape != tensor.shape:
            raise CorruptionError(f"shape {value.shape} does not match {tensor.shape}", name)
        tensor.data = value.astype(tensor.data.dtype, copy=True)


def checkpoint_roundtrip(params: Mapping[str, Tensor], state: OptimState,
                         path: PathLike) -> Tuple[Dict[str, np.ndarray], OptimState]:
    """Save then reload; the result is bitwise identical to the input."""
    save_checkpoint(path, params, state)
    arrays, restored, _ = load_checkpoint(path)
    return arrays, restored
