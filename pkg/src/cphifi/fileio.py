"""Readers and writers for tensors, matrices, observation sets and design points.

Tensor/matrix files: a UTF-8 line ``shape: n1 n2 ... nd`` followed directly
by the N entries as little-endian float64 in column-major order. A headerless
``.f64`` blob is also accepted when the shape is supplied separately.

Observation files: the same ``shape:`` header line, then one line per entry,
``i1 i2 ... id value`` with 1-based indices.
"""
from __future__ import annotations

import os

import numpy as np

from .sampled import ObservationSet
from .tensor_core import DenseTensor

_LE_F64 = np.dtype("<f8")


def _header(shape) -> bytes:
    return ("shape: " + " ".join(str(int(s)) for s in shape) + "\n").encode("utf-8")


def _parse_header(line: str) -> tuple[int, ...]:
    key, _, rest = line.partition(":")
    if key.strip() != "shape" or not rest.split():
        raise ValueError(f"malformed header line {line!r}; expected 'shape: n1 ... nd'")
    return tuple(int(tok) for tok in rest.split())


def write_tensor(path, t: DenseTensor) -> None:
    with open(path, "wb") as fh:
        fh.write(_header(t.shape))
        fh.write(t.data.astype(_LE_F64).tobytes())


def read_tensor(path, shape=None) -> DenseTensor:
    """Read a header+blob tensor file, or a raw blob when ``shape`` is given."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw.startswith(b"shape:"):
        line, _, blob = raw.partition(b"\n")
        file_shape = _parse_header(line.decode("utf-8"))
        if shape is not None and tuple(shape) != file_shape:
            raise ValueError(f"file shape {file_shape} != requested {tuple(shape)}")
        shape = file_shape
    elif shape is None:
        raise ValueError(f"{path}: no shape header; pass the shape explicitly")
    else:
        blob = raw
    data = np.frombuffer(blob, dtype=_LE_F64)
    return DenseTensor(tuple(shape), data.astype(np.float64))


def write_matrix(path, a: np.ndarray) -> None:
    write_tensor(path, DenseTensor.from_array(np.atleast_2d(a)))


def read_matrix(path) -> np.ndarray:
    t = read_tensor(path)
    if t.ndim != 2:
        raise ValueError(f"{path} holds a {t.ndim}-way tensor, not a matrix")
    return np.array(t.to_array())


def write_observations(path, obs: ObservationSet) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_header(obs.shape).decode("utf-8"))
        for idx, val in zip(obs.indices + 1, obs.values):
            fh.write(" ".join(map(str, idx)) + f" {float(val)!r}\n")


def read_observations(path) -> ObservationSet:
    with open(path, encoding="utf-8") as fh:
        shape = _parse_header(fh.readline())
        rows = [line.split() for line in fh if line.strip()]
    d = len(shape)
    if any(len(row) != d + 1 for row in rows):
        raise ValueError(f"{path}: every entry line needs {d} indices and a value")
    idx = np.array([[int(tok) for tok in row[:d]] for row in rows], dtype=np.int64)
    vals = np.array([float(row[d]) for row in rows])
    return ObservationSet(shape, idx.reshape(-1, d) - 1, vals)


def read_points(path) -> np.ndarray:
    """Design points, one real per line."""
    with open(path, encoding="utf-8") as fh:
        return np.array([float(line) for line in fh if line.strip()])


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path
