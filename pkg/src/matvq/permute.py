"""Greedy nearest-neighbor column permutation of row strips.

The sweep walks positions left to right; at position j it finds the
remaining column closest (Euclidean) to column j and swaps it into
position j+1, so similar columns end up adjacent. Each 128-row strip of a
matrix is permuted independently and stores its own permutation.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ParameterError, StructureError

STRIP_ROWS = 128


@dataclass
class ColumnPermutation:
    forward: np.ndarray  # forward[i] = source column now at position i
    inverse: np.ndarray  # inverse[src] = position of source column src

    def __post_init__(self):
        self.forward = np.asarray(self.forward, dtype=np.int64)
        self.inverse = np.asarray(self.inverse, dtype=np.int64)

    @property
    def q(self) -> int:
        return len(self.forward)


def _validate(perm: ColumnPermutation, q: int):
    f, inv = perm.forward, perm.inverse
    if len(f) != q or len(inv) != q:
        raise StructureError(f"permutation length {len(f)} does not match q={q}")
    ident = np.arange(q)
    if not (
        np.array_equal(np.sort(f), ident)
        and np.array_equal(np.sort(inv), ident)
        and np.array_equal(inv[f], ident)
    ):
        raise StructureError("forward/inverse are not mutually inverse bijections")


def permute_columns(w):
    """Greedy sweep over one strip; returns (permuted, ColumnPermutation)."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[1] < 1:
        raise ParameterError(f"expected a 2-D strip, got shape {w.shape}")
    permuted, forward = kernels.greedy_permute(w)
    return permuted, ColumnPermutation(forward=forward, inverse=np.argsort(forward))


def apply_inverse(wp, perm: ColumnPermutation):
    """Restore the original column order of a permuted strip."""
    wp = np.asarray(wp, dtype=np.float64)
    _validate(perm, wp.shape[1])
    return wp[:, perm.inverse]


def permutation_bit_cost(q: int, rows_per_block: int) -> float:
    """Stored-permutation overhead in bits per matrix coordinate."""
    if q < 2:
        raise ParameterError(f"q must be >= 2, got {q}")
    if rows_per_block < 1:
        raise ParameterError(f"rows_per_block must be >= 1, got {rows_per_block}")
    width = (q - 1).bit_length()  # ceil(log2(q))
    return q * width / (rows_per_block * q)


def strip_heights(p: int, strip_rows: int = STRIP_ROWS):
    """Heights of the independent strips tiling p rows (last may be short)."""
    full, rem = divmod(p, strip_rows)
    return [strip_rows] * full + ([rem] if rem else [])


def permute_strips(w, strip_rows: int = STRIP_ROWS):
    """Permute each strip of rows independently.

    Returns (permuted matrix, list of per-strip ColumnPermutation).
    """
    w = np.asarray(w, dtype=np.float64)
    out = np.empty_like(w)
    perms = []
    row = 0
    for h in strip_heights(w.shape[0], strip_rows):
        block, perm = permute_columns(w[row : row + h])
        out[row : row + h] = block
        perms.append(perm)
        row += h
    return out, perms


def unpermute_strips(wp, perms, strip_rows: int = STRIP_ROWS):
    """Inverse of permute_strips."""
    wp = np.asarray(wp, dtype=np.float64)
    heights = strip_heights(wp.shape[0], strip_rows)
    if len(perms) != len(heights):
        raise StructureError(
            f"{len(perms)} permutations for {len(heights)} strips"
        )
    out = np.empty_like(wp)
    row = 0
    for h, perm in zip(heights, perms):
        out[row : row + h] = apply_inverse(wp[row : row + h], perm)
        row += h
    return out
