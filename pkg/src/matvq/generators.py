"""Seeded synthetic matrix generators and the raw matrix file format."""

import struct

import numpy as np

from .errors import FormatError, ParameterError
from .linalg import as_matrix

MATRIX_MAGIC = b"WMX1"


def gen_gaussian(p: int, q: int, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).normal(size=(p, q))


def gen_planted(
    p: int,
    q: int,
    n_prototypes: int = 8,
    noise: float = 0.1,
    scale_spread: float = 4.0,
    seed: int = 0,
) -> np.ndarray:
    """Columns drawn from a few prototype directions with spread magnitudes.

    Each of the n_prototypes gets a log-uniform magnitude in
    [1/scale_spread, scale_spread]; every column is its prototype plus
    proportional Gaussian noise. Mimics matrices with strong vertical
    column-group structure.
    """
    if n_prototypes < 1 or n_prototypes > q:
        raise ParameterError(f"n_prototypes must be in [1, {q}], got {n_prototypes}")
    rng = np.random.default_rng(seed)
    scales = np.exp(
        rng.uniform(-np.log(scale_spread), np.log(scale_spread), size=n_prototypes)
    )
    prototypes = rng.normal(size=(p, n_prototypes)) * scales[None, :]
    assignment = rng.integers(n_prototypes, size=q)
    w = prototypes[:, assignment]
    w += rng.normal(size=(p, q)) * (noise * scales[assignment])[None, :]
    return w


def gen_outliers(
    p: int, q: int, count: int, amplitude: float = 10.0, seed: int = 0
) -> np.ndarray:
    """iid Gaussian with exactly `count` entries boosted to +-amplitude."""
    if count < 0 or count > p * q:
        raise ParameterError(f"count must be in [0, {p * q}], got {count}")
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(p, q))
    idx = rng.choice(p * q, size=count, replace=False)
    w.flat[idx] = amplitude * rng.choice([-1.0, 1.0], size=count)
    return w


def column_correlation_stat(w) -> float:
    """Mean over columns of the max absolute cosine to any other column."""
    w = as_matrix(w)
    norms = np.maximum(np.sqrt((w * w).sum(axis=0)), 1e-30)
    c = np.abs((w / norms).T @ (w / norms))
    np.fill_diagonal(c, 0.0)
    return float(c.max(axis=1).mean())


def write_matrix(path, w, dtype: str = "<f8"):
    """Raw matrix file: 16-byte header (magic, itemsize, rows, cols), then
    row-major little-endian float32/float64 data."""
    w = as_matrix(w)
    if dtype not in ("<f4", "<f8"):
        raise ParameterError(f"dtype must be <f4 or <f8, got {dtype!r}")
    itemsize = 4 if dtype == "<f4" else 8
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIII", MATRIX_MAGIC, itemsize, w.shape[0], w.shape[1]))
        fh.write(np.ascontiguousarray(w, dtype=dtype).tobytes())


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:4] != MATRIX_MAGIC:
            raise FormatError(f"{path}: not a raw matrix file")
        _, itemsize, rows, cols = struct.unpack("<4sIII", header)
        if itemsize not in (4, 8):
            raise FormatError(f"{path}: bad item size {itemsize}")
        data = fh.read()
    expected = rows * cols * itemsize
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} data bytes, got {len(data)}")
    dtype = "<f4" if itemsize == 4 else "<f8"
    return np.frombuffer(data, dtype=dtype).astype(np.float64).reshape(rows, cols)
