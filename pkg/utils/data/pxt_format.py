"""PXT1 binary tensor format.

Layout: magic ``b"PXT1"``; u8 dtype code (0 = float32, 1 = float64); u8 ndim;
ndim x u32 little-endian extents; little-endian scalars in row-major order.
"""

import struct
from pathlib import Path
from typing import Union

import numpy as np

from src.errors import CorruptionError, ShapeError

MAGIC = b"PXT1"
DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
CODE_FOR_DTYPE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}

PathLike = Union[str, Path]


def encode(array: np.ndarray) -> bytes:
    """Serialize an array to PXT1 bytes.

    Args:
        array: float32 or float64 array of any rank (< 256)

    Returns:
        Encoded bytes
    """
    array = np.asarray(array)
    code = CODE_FOR_DTYPE.get(array.dtype)
    if code is None:
        raise ShapeError(f"PXT1 stores float32/float64 only, got {array.dtype}")
    if array.ndim > 255:
        raise ShapeError(f"rank {array.ndim} does not fit in a u8")
    header = MAGIC + struct.pack("<BB", code, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    payload = np.ascontiguousarray(array, dtype=DTYPE_CODES[code]).tobytes(order="C")
    return header + payload


def decode(blob: bytes, name: str = "<bytes>") -> np.ndarray:
    """Deserialize PXT1 bytes.

    Args:
        blob: Encoded bytes
        name: Source name used in error messages

    Returns:
        Array in native byte order with the stored dtype
    """
    if len(blob) < 6 or blob[:4] != MAGIC:
        raise CorruptionError("bad PXT1 magic", name)
    code, ndim = struct.unpack_from("<BB", blob, 4)
    if code not in DTYPE_CODES:
        raise CorruptionError(f"unknown dtype code {code}", name)
    offset = 6 + 4 * ndim
    if len(blob) < offset:
        raise CorruptionError("truncated PXT1 header", name)
    shape = struct.unpack_from(f"<{ndim}I", blob, 6)
    dtype = DTYPE_CODES[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(blob) - offset != expected:
        raise CorruptionError(
            f"payload has {len(blob) - offset} bytes, expected {expected}", name
        )
    data = np.frombuffer(blob, dtype=dtype, offset=offset).reshape(shape)
    return data.astype(dtype.newbyteorder("="), copy=True)


def write_tensor(path: PathLike, array: np.ndarray) -> None:
    """Write one array as a PXT1 file."""
    Path(path).write_bytes(encode(array))


def read_tensor(path: PathLike) -> np.ndarray:
    """Read one PXT1 file.

    Raises:
        CorruptionError: If the file is missing or malformed
    """
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError as e:
        raise CorruptionError("missing tensor file", path.name) from e
    return decode(blob, path.name)
