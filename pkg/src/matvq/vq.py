"""Kmeans vector quantization: codebook fit, encode/decode, code packing.

One codebook of 2^(b*d) centroids in dimension d quantizes consecutive
d-vectors of a flat value stream to nearest-centroid indices. Centroids
are rounded to half precision when the fit finishes, matching their
16-bit serialized form. The quantizer has no gradient of its own; the
backward contract is the straight-through identity.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import CorruptionError, DimensionError, ParameterError

KMEANS_MAX_ITER = 300


@dataclass
class Codebook:
    dim: int
    bits_per_dim: int
    centroids: np.ndarray  # (2^(bits_per_dim*dim), dim) float64, f16-valued
    distortion_history: list = field(default_factory=list, repr=False)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def bits_per_code(self) -> int:
        return self.bits_per_dim * self.dim

    @property
    def storage_bits(self) -> int:
        # 16-bit entries: 16 * d * 2^(b*d)
        return 16 * self.dim * self.k


@dataclass
class CodeStream:
    indices: np.ndarray  # uint64 centroid indices
    bits_per_code: int

    @property
    def count(self) -> int:
        return len(self.indices)

    @property
    def payload_bits(self) -> int:
        return self.count * self.bits_per_code


def _plusplus_init(x, k, rng):
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]), dtype=np.float64)
    centroids[0] = x[rng.integers(n)]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)  # all points covered; duplicate freely
        centroids[c] = x[idx]
        d2 = np.minimum(d2, ((x - centroids[c]) ** 2).sum(axis=1))
    return centroids


def lloyd(x, k, seed=0, max_iter=KMEANS_MAX_ITER):
    """kmeans++ init then Lloyd iterations to an assignment fixpoint.

    Returns (centroids, labels, history) where history holds the total
    distortion measured at every assignment step (non-increasing).
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ParameterError(f"expected n x d vectors with n >= 1, got {x.shape}")
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    rng = np.random.default_rng(seed)
    centroids = _plusplus_init(x, k, rng)

    history = []
    labels = None
    for _ in range(max_iter):
        new_labels, dists = kernels.kmeans_assign(x, centroids)
        history.append(float(dists.sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        sums, counts = kernels.kmeans_update(x, labels, k)
        occupied = counts > 0
        centroids[occupied] = sums[occupied] / counts[occupied, None]
        for c in np.flatnonzero(~occupied):
            far = int(np.argmax(dists))
            centroids[c] = x[far]
            dists[far] = 0.0
    return centroids, labels, history


def kmeans_fit(vectors, b: int, d: int, seed=0, max_iter=KMEANS_MAX_ITER) -> Codebook:
    """Fit the 2^(b*d)-entry codebook for d-dimensional buckets."""
    if b < 1 or d < 1:
        raise ParameterError(f"bits {b} and dim {d} must be >= 1")
    if b * d > 16:
        raise ParameterError(f"codebook of 2^{b * d} centroids is unreasonable")
    vectors = np.ascontiguousarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[1] != d:
        raise DimensionError(f"expected n x {d} vectors, got {vectors.shape}")
    centroids, _, history = lloyd(vectors, 2 ** (b * d), seed=seed, max_iter=max_iter)
    centroids = centroids.astype(np.float16).astype(np.float64)
    return Codebook(dim=d, bits_per_dim=b, centroids=centroids, distortion_history=history)


def vq_encode(x, cb: Codebook) -> CodeStream:
    """Map consecutive d-vectors to nearest-centroid indices (ties: lowest)."""
    x = np.ascontiguousarray(x, dtype=np.float64).ravel()
    if x.size % cb.dim:
        raise DimensionError(
            f"value count {x.size} is not divisible by bucket dim {cb.dim}"
        )
    if x.size == 0:
        return CodeStream(indices=np.zeros(0, dtype=np.uint64), bits_per_code=cb.bits_per_code)
    labels, _ = kernels.kmeans_assign(x.reshape(-1, cb.dim), cb.centroids)
    return CodeStream(indices=labels.astype(np.uint64), bits_per_code=cb.bits_per_code)


def vq_decode(codes: CodeStream, cb: Codebook) -> np.ndarray:
    """Concatenate the centroid vectors selected by the code stream."""
    if codes.count == 0:
        return np.zeros(0, dtype=np.float64)
    if codes.indices.max() >= cb.k:
        raise CorruptionError(
            f"code index {int(codes.indices.max())} out of range for k={cb.k}"
        )
    return cb.centroids[codes.indices.astype(np.int64)].ravel()


def ste_backward(grad_out) -> np.ndarray:
    """Straight-through estimator: the quantizer backward is the identity."""
    return np.array(grad_out, dtype=np.float64, copy=True)


def pack_codes(stream: CodeStream) -> np.ndarray:
    """LSB-first little-endian packing of the index stream."""
    return kernels.pack_bits(stream.indices, stream.bits_per_code)


def unpack_codes(buf, bits_per_code: int, count: int) -> CodeStream:
    expected = (count * bits_per_code + 7) // 8
    buf = np.ascontiguousarray(buf, dtype=np.uint8)
    if buf.size < expected:
        raise CorruptionError(
            f"packed code buffer holds {buf.size} bytes, need {expected}"
        )
    return CodeStream(
        indices=kernels.unpack_bits(buf, bits_per_code, count),
        bits_per_code=bits_per_code,
    )
