"""Named random streams split from a single root seed."""

import zlib
from typing import Optional

import numpy as np

# Stream names used across the code base
INIT = "init"
SAMPLING = "pixel-sampling"
DROPOUT = "dropout"
DATA = "data-gen"
AUGMENT = "augment"


def stream_key(name: str) -> int:
    """Stable integer key for a stream name.

    Args:
        name: Stream name

    Returns:
        CRC32 of the UTF-8 name (stable across processes, unlike hash())
    """
    return zlib.crc32(name.encode("utf-8"))


class RngStreams:
    """Splits one root seed into independent, reproducible generators.

    A generator is addressed by a stream name and an optional step index, so
    an ablation that changes one stream leaves the others untouched and a
    resumed run can recreate iteration ``i``'s generator without stored state.
    """

    def __init__(self, seed: int):
        """Initialize the stream factory.

        Args:
            seed: Root seed (non-negative)
        """
        self.seed = int(seed)

    def get(self, name: str, step: Optional[int] = None) -> np.random.Generator:
        """Get the generator for a named stream.

        Args:
            name: Stream name (e.g. ``"init"``, ``"pixel-sampling"``)
            step: Optional iteration or item index

        Returns:
            A freshly seeded numpy Generator
        """
        key = (stream_key(name),) if step is None else (stream_key(name), int(step))
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=key))

    def child_seed(self, name: str, step: Optional[int] = None) -> int:
        """Derive a plain integer seed for APIs that take ``seed`` arguments."""
        return int(self.get(name, step).integers(0, 2**31 - 1))
