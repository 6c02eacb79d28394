"""Alternating low-rank + quantized decomposition, and DoRA reparametrization.

The decomposition splits a matrix into a quantized part Q and a rank-r
correction L1 @ L2.T by alternating between quantizing the current
residual and taking a truncated SVD of what the quantizer left behind.
DoRA re-expresses the combined matrix as per-column magnitudes times a
unit-column direction factor.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .linalg import as_matrix, frobenius_error, truncated_svd

COLNORM_EPS = 1e-12
DEFAULT_ITERS = 3


@dataclass
class LowRankPair:
    L1: np.ndarray  # (p, r)
    L2: np.ndarray  # (q, r)

    @property
    def rank(self) -> int:
        return self.L1.shape[1]

    def product(self) -> np.ndarray:
        if self.rank == 0:
            return np.zeros((self.L1.shape[0], self.L2.shape[0]))
        return self.L1 @ self.L2.T

    @staticmethod
    def empty(p: int, q: int) -> "LowRankPair":
        return LowRankPair(L1=np.zeros((p, 0)), L2=np.zeros((q, 0)))


@dataclass
class QuantizedLowRank:
    """8-bit per-column absmax quantization of the factor pair."""

    codes1: np.ndarray  # int8 (p, r)
    codes2: np.ndarray  # int8 (q, r)
    scales1: np.ndarray  # float64 holding f16-representable values, (r,)
    scales2: np.ndarray

    @property
    def rank(self) -> int:
        return self.codes1.shape[1]

    def pair(self) -> LowRankPair:
        return LowRankPair(
            L1=self.codes1.astype(np.float64) * self.scales1,
            L2=self.codes2.astype(np.float64) * self.scales2,
        )

    def product(self) -> np.ndarray:
        return self.pair().product()


def _column_codes(m: np.ndarray):
    absmax = np.abs(m).max(axis=0) if m.size else np.zeros(m.shape[1])
    scales = np.maximum(absmax / 127.0, COLNORM_EPS)
    scales = scales.astype(np.float16).astype(np.float64)
    scales[scales == 0.0] = float(np.nextafter(np.float16(0), np.float16(1)))
    codes = np.clip(np.rint(m / scales), -127, 127).astype(np.int8)
    return codes, scales


def quantize_lowrank(lr: LowRankPair) -> QuantizedLowRank:
    codes1, scales1 = _column_codes(lr.L1)
    codes2, scales2 = _column_codes(lr.L2)
    return QuantizedLowRank(codes1=codes1, codes2=codes2, scales1=scales1, scales2=scales2)


@dataclass
class DecomposeResult:
    state: object  # quantizer state; .dequantized reconstructs Q
    lowrank: LowRankPair
    objectives: list  # ||w - (deq(Q) + L1 L2^T)||_F after each iteration
    half_step_objectives: list = field(default_factory=list)  # (label, value)


def residual_decompose(
    w,
    r: int,
    quantizer,
    iters: int = DEFAULT_ITERS,
    order: str = "residual_first",
) -> DecomposeResult:
    """Alternate quantization and rank-r extraction to approximate w.

    quantizer.quantize(matrix) must return a state whose ``dequantized``
    attribute reconstructs the quantized matrix. residual_first runs
    quantize -> svd per iteration (iteration 1 therefore starts from the
    plain-quantization baseline and strictly improves on it when r > 0);
    svd_first runs svd -> quantize, the listed order of the block-wise
    compression recipe.
    """
    w = as_matrix(w)
    p, q = w.shape
    if r < 0 or r > min(p, q):
        raise ParameterError(f"rank must be in [0, {min(p, q)}], got {r}")
    if iters < 1:
        raise ParameterError(f"iters must be >= 1, got {iters}")
    if order not in ("residual_first", "svd_first"):
        raise ParameterError(f"unknown alternation order {order!r}")

    lr = LowRankPair.empty(p, q)
    state = None
    deq = np.zeros_like(w)
    objectives = []
    halves = []

    def low():
        return lr.product()

    for it in range(iters):
        if order == "svd_first" and r > 0:
            L1, L2 = truncated_svd(w - deq, r)
            lr = LowRankPair(L1=L1, L2=L2)
            halves.append((f"iter{it}.svd", frobenius_error(w, deq + low())))
        state = quantizer.quantize(w - low())
        deq = state.dequantized
        halves.append((f"iter{it}.quantize", frobenius_error(w, deq + low())))
        if order == "residual_first" and r > 0:
            L1, L2 = truncated_svd(w - deq, r)
            lr = LowRankPair(L1=L1, L2=L2)
            halves.append((f"iter{it}.svd", frobenius_error(w, deq + low())))
        objectives.append(halves[-1][1])

    return DecomposeResult(
        state=state, lowrank=lr, objectives=objectives, half_step_objectives=halves
    )


@dataclass
class DoraState:
    magnitude: np.ndarray  # (q,) positive
    lowrank: LowRankPair


def colnorms(v: np.ndarray) -> np.ndarray:
    return np.maximum(np.sqrt((v * v).sum(axis=0)), COLNORM_EPS)


def dora_forward(w_q, s: DoraState) -> np.ndarray:
    """magnitude-scaled unit-column direction of w_q + L1 L2^T."""
    w_q = as_matrix(w_q)
    v = w_q + s.lowrank.product()
    if len(s.magnitude) != v.shape[1]:
        raise ParameterError(
            f"magnitude length {len(s.magnitude)} does not match {v.shape[1]} columns"
        )
    # scaling by (m/n) keeps the identity case m == colnorms exact
    return v * (s.magnitude / colnorms(v))[None, :]


def dora_init(w_q, lr: LowRankPair) -> DoraState:
    """Magnitudes that make dora_forward reproduce w_q + L1 L2^T."""
    w_q = as_matrix(w_q)
    return DoraState(magnitude=colnorms(w_q + lr.product()), lowrank=lr)
