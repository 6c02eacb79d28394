"""NormalFloat block normalization and scalar quantization.

Levels are Gaussian quantiles normalized to [-1, 1] with an exact zero,
2^(b-1) strictly negative levels and 2^(b-1) non-negative ones. Per-block
absmax scales are double-quantized: 8-bit codes against a per-group max,
group maxes stored at half precision.
"""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.special import ndtri

from . import kernels
from .errors import ParameterError, StructureError

ZERO_BLOCK_EPS = 1e-12
DEFAULT_BLOCK_SIZE = 64
DEFAULT_GROUP_SIZE = 256

_F16_MAX = 65504.0
_F16_TINY = float(np.nextafter(np.float16(0), np.float16(1)))


@dataclass
class NFLevels:
    bits: int
    levels: np.ndarray  # sorted float64, length 2^bits


def nf_levels(b: int) -> NFLevels:
    """Gaussian-quantile level table for b-bit scalar quantization.

    Tail probability per side is 1/2^(b+1); note the b=1 table is {-1, 0}
    (the single non-negative quantile is the median).
    """
    if not (1 <= b <= 8):
        raise ParameterError(f"bits must be in [1, 8], got {b}")
    half = 2 ** (b - 1)
    offset = 1.0 - 1.0 / 2 ** (b + 1)
    neg = ndtri(np.linspace(1.0 - offset, 0.5, half, endpoint=False))
    nonneg = ndtri(np.linspace(0.5, offset, half))
    levels = np.concatenate([neg, nonneg]) / ndtri(offset)
    levels[half] = 0.0  # exact zero at the median
    return NFLevels(bits=b, levels=levels)


@dataclass
class ScaleTree:
    """Double-quantized per-block scales.

    Reconstructed scale for block i is scale_codes[i]/255 * group max,
    with group maxes already rounded to half precision so serialization
    round-trips bit-exactly. Codes are clamped to >= 1, keeping every
    reconstructed scale positive.
    """

    block_size: int
    group_size: int
    scale_codes: np.ndarray  # uint8, one per block
    group_scales: np.ndarray  # float64 holding f16-representable values
    n_values: int

    @property
    def n_blocks(self) -> int:
        return len(self.scale_codes)

    @property
    def n_groups(self) -> int:
        return len(self.group_scales)

    def scales(self) -> np.ndarray:
        groups = np.repeat(self.group_scales, self.group_size)[: self.n_blocks]
        return self.scale_codes.astype(np.float64) / 255.0 * groups

    @property
    def overhead_bits_per_coord(self) -> Fraction:
        # idealized rate; stored totals are 8*n_blocks + 16*n_groups bits
        return Fraction(8, self.block_size) + Fraction(
            16, self.block_size * self.group_size
        )


def _block_scales(x: np.ndarray, block_size: int) -> np.ndarray:
    n = x.size
    n_blocks = -(-n // block_size)
    padded = np.zeros(n_blocks * block_size)
    padded[:n] = np.abs(x)
    return np.maximum(padded.reshape(n_blocks, block_size).max(axis=1), ZERO_BLOCK_EPS)


def normalize_blocks(
    x,
    block_size: int = DEFAULT_BLOCK_SIZE,
    group_size: int = DEFAULT_GROUP_SIZE,
):
    """Per-block absmax normalization into [-1, 1] plus the scale tree."""
    if block_size < 1:
        raise ParameterError(f"block_size must be >= 1, got {block_size}")
    if group_size < 1:
        raise ParameterError(f"group_size must be >= 1, got {group_size}")
    x = np.ascontiguousarray(x, dtype=np.float64).ravel()
    scales = _block_scales(x, block_size)
    n_blocks = len(scales)

    n_groups = -(-n_blocks // group_size)
    padded = np.zeros(n_groups * group_size)
    padded[:n_blocks] = scales
    gmax = padded.reshape(n_groups, group_size).max(axis=1)
    gmax = np.minimum(gmax, _F16_MAX).astype(np.float16).astype(np.float64)
    gmax[gmax == 0.0] = _F16_TINY

    expanded = np.repeat(gmax, group_size)[:n_blocks]
    codes = np.clip(np.rint(scales / expanded * 255.0), 1, 255).astype(np.uint8)
    tree = ScaleTree(
        block_size=block_size,
        group_size=group_size,
        scale_codes=codes,
        group_scales=gmax,
        n_values=x.size,
    )

    per_value = np.repeat(scales, block_size)[: x.size]
    return x / per_value, tree


def denormalize(normalized, tree: ScaleTree) -> np.ndarray:
    """Multiply back the reconstructed (double-quantized) block scales."""
    normalized = np.ascontiguousarray(normalized, dtype=np.float64).ravel()
    if normalized.size != tree.n_values:
        raise StructureError(
            f"value count {normalized.size} does not match tree ({tree.n_values})"
        )
    per_value = np.repeat(tree.scales(), tree.block_size)[: normalized.size]
    return normalized * per_value


def sq_quantize(
    x,
    b: int,
    block_size: int = DEFAULT_BLOCK_SIZE,
    group_size: int = DEFAULT_GROUP_SIZE,
):
    """Blockwise scalar quantization to the b-bit level table.

    Returns (codes, tree); dequantize with sq_dequantize.
    """
    normalized, tree = normalize_blocks(x, block_size, group_size)
    codes = kernels.nearest_level(normalized, nf_levels(b).levels)
    return codes, tree


def sq_dequantize(codes, tree: ScaleTree, b: int) -> np.ndarray:
    levels = nf_levels(b).levels
    codes = np.ascontiguousarray(codes, dtype=np.uint8)
    if codes.size != tree.n_values:
        raise StructureError(
            f"code count {codes.size} does not match tree ({tree.n_values})"
        )
    if codes.size and codes.max() >= len(levels):
        raise StructureError("code index exceeds level table")
    return denormalize(levels[codes], tree)
