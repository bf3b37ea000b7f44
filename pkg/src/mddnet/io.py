"""File codecs: feature matrices (CSV or binary) and named-array checkpoints.

Feature files hold one t x d float matrix in either of two interchangeable
encodings, auto-detected on read:

* binary: magic ``MDDF``, little-endian u32 row count, u32 column count,
  then ``t * d`` little-endian float32 values in row-major order;
* CSV: t rows of d comma-separated decimal floats, no header.

Checkpoints extend the same idea to a set of named arrays: magic ``MDDC``,
u32 array count, then per array a u32 name length, the UTF-8 name, u32 rank,
u32 dims and the float32 payload.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .errors import IoError

FEATURE_MAGIC = b"MDDF"
CHECKPOINT_MAGIC = b"MDDC"


def write_features_binary(path: str | Path, matrix: np.ndarray) -> None:
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    if matrix.ndim != 2:
        raise IoError(f"feature matrix must be 2-D, got shape {matrix.shape}")
    t, d = matrix.shape
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<II", t, d))
        f.write(matrix.tobytes())


def write_features_csv(path: str | Path, matrix: np.ndarray) -> None:
    matrix = np.asarray(matrix, dtype=np.float32)
    if matrix.ndim != 2:
        raise IoError(f"feature matrix must be 2-D, got shape {matrix.shape}")
    np.savetxt(path, matrix, delimiter=",", fmt="%.8g")


def write_features(path: str | Path, matrix: np.ndarray, fmt: str = "binary") -> None:
    if fmt == "binary":
        write_features_binary(path, matrix)
    elif fmt == "csv":
        write_features_csv(path, matrix)
    else:
        raise IoError(f"unknown feature format {fmt!r} (use 'binary' or 'csv')")


def read_features(path: str | Path) -> np.ndarray:
    """Load a feature matrix, auto-detecting the encoding by magic bytes."""
    try:
        with open(path, "rb") as f:
            head = f.read(4)
            if head == FEATURE_MAGIC:
                return _read_binary_body(f, path)
        # No magic: fall back to CSV.
        return _read_csv(path)
    except OSError as exc:
        raise IoError(f"cannot read feature file {path}: {exc}") from exc


def _read_binary_body(f: io.BufferedReader, path: str | Path) -> np.ndarray:
    header = f.read(8)
    if len(header) != 8:
        raise IoError(f"{path}: truncated binary header")
    t, d = struct.unpack("<II", header)
    payload = f.read(4 * t * d)
    if len(payload) != 4 * t * d:
        raise IoError(f"{path}: truncated payload, expected {t}x{d} float32")
    return np.frombuffer(payload, dtype="<f4").reshape(t, d).astype(np.float32)


def _read_csv(path: str | Path) -> np.ndarray:
    try:
        matrix = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise IoError(f"{path}: not a valid CSV feature file: {exc}") from exc
    return matrix.astype(np.float32)


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    """Write named float arrays as a single binary checkpoint file."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(arrays)))
        for name, array in arrays.items():
            data = np.ascontiguousarray(array, dtype="<f4")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(data.tobytes())


def load_arrays(path: str | Path) -> dict[str, np.ndarray]:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {path}: {exc}") from exc
    if blob[:4] != CHECKPOINT_MAGIC:
        raise IoError(f"{path}: not a checkpoint file (bad magic)")
    offset = 4
    (count,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        array = np.frombuffer(blob, dtype="<f4", count=size, offset=offset)
        offset += 4 * size
        arrays[name] = array.reshape(shape).astype(np.float32)
    if offset != len(blob):
        raise IoError(f"{path}: trailing bytes after last array")
    return arrays
