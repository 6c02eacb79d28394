"""Hot numeric kernels: numba @njit with a pure-numpy fallback.

Each kernel exists twice: ``_<name>_nb`` (numba) and ``_<name>_np``
(vectorized numpy). The public function dispatches on the backend chosen
by MATVQ_BACKEND (see _backend). ``benchmarks/bench_kernels.py`` times the
two side by side.

All kernels are deterministic: ties resolve to the lowest index, and
reductions run in a fixed order.
"""

import math

import numpy as np

from ._backend import BACKEND, HAVE_NUMBA

if HAVE_NUMBA:
    from numba import njit
else:  # pragma: no cover - exercised only on numba-less installs
    njit = None

_KMEANS_CHUNK = 8192


# ---------------------------------------------------------------------------
# kmeans: assignment and centroid accumulation


def _kmeans_assign_np(x, centroids):
    n = x.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dists = np.empty(n, dtype=np.float64)
    for start in range(0, n, _KMEANS_CHUNK):
        chunk = x[start : start + _KMEANS_CHUNK]
        d = ((chunk[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        idx = np.argmin(d, axis=1)
        labels[start : start + _KMEANS_CHUNK] = idx
        dists[start : start + _KMEANS_CHUNK] = d[np.arange(len(chunk)), idx]
    return labels, dists


def _kmeans_update_np(x, labels, k):
    d = x.shape[1]
    sums = np.zeros((k, d), dtype=np.float64)
    np.add.at(sums, labels, x)
    counts = np.bincount(labels, minlength=k).astype(np.int64)
    return sums, counts


# ---------------------------------------------------------------------------
# greedy nearest-neighbor column permutation sweep


def _greedy_permute_np(w, perm):
    # In-place sweep: pull column j's nearest remaining neighbor into j+1.
    q = w.shape[1]
    for j in range(q - 1):
        rest = w[:, j + 1 :]
        d = ((rest - w[:, j : j + 1]) ** 2).sum(axis=0)
        best = j + 1 + int(np.argmin(d))
        if best != j + 1:
            w[:, [j + 1, best]] = w[:, [best, j + 1]]
            perm[j + 1], perm[best] = perm[best], perm[j + 1]


# ---------------------------------------------------------------------------
# scalar quantization: nearest sorted-level lookup, ties to the lower level


def _nearest_level_np(values, levels):
    mids = (levels[:-1] + levels[1:]) / 2.0
    return np.searchsorted(mids, values, side="left").astype(np.uint8)


# ---------------------------------------------------------------------------
# bit packing: little-endian, first code in the LSBs of the first byte


def _pack_bits_np(codes, width):
    n = codes.shape[0]
    shifts = np.arange(width, dtype=np.uint64)
    bits = ((codes[:, None] >> shifts[None, :]) & np.uint64(1)).astype(np.uint8)
    return np.packbits(bits.ravel(), bitorder="little")


def _unpack_bits_np(buf, width, count):
    bits = np.unpackbits(buf, bitorder="little")[: count * width]
    weights = (np.uint64(1) << np.arange(width, dtype=np.uint64)).astype(np.uint64)
    return bits.reshape(count, width).astype(np.uint64) @ weights


# ---------------------------------------------------------------------------
# one-sided Jacobi orthogonalization (SVD core)


def _jacobi_np(u, v, max_sweeps, tol):
    q = u.shape[1]
    worst = 0.0
    for sweep in range(max_sweeps):
        worst = 0.0
        rotated = False
        for i in range(q - 1):
            for j in range(i + 1, q):
                ui = u[:, i]
                uj = u[:, j]
                a = ui @ ui
                b = uj @ uj
                g = ui @ uj
                denom = math.sqrt(a * b)
                if denom == 0.0:
                    continue
                r = abs(g) / denom
                if r > worst:
                    worst = r
                if r <= tol:
                    continue
                rotated = True
                zeta = (b - a) / (2.0 * g)
                t = math.copysign(1.0, zeta) / (
                    abs(zeta) + math.sqrt(1.0 + zeta * zeta)
                )
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                new_i = c * ui - s * uj
                new_j = s * ui + c * uj
                u[:, i] = new_i
                u[:, j] = new_j
                vi = v[:, i].copy()
                vj = v[:, j]
                v[:, i] = c * vi - s * vj
                v[:, j] = s * vi + c * vj
        if not rotated:
            return sweep + 1, worst, True
    return max_sweeps, worst, False


if HAVE_NUMBA:

    @njit(cache=True)
    def _kmeans_assign_nb(x, centroids):
        n, d = x.shape
        k = centroids.shape[0]
        labels = np.empty(n, dtype=np.int64)
        dists = np.empty(n, dtype=np.float64)
        for i in range(n):
            best = 0
            best_d = np.inf
            for c in range(k):
                acc = 0.0
                for t in range(d):
                    diff = x[i, t] - centroids[c, t]
                    acc += diff * diff
                if acc < best_d:
                    best_d = acc
                    best = c
            labels[i] = best
            dists[i] = best_d
        return labels, dists

    @njit(cache=True)
    def _kmeans_update_nb(x, labels, k):
        n, d = x.shape
        sums = np.zeros((k, d), dtype=np.float64)
        counts = np.zeros(k, dtype=np.int64)
        for i in range(n):
            c = labels[i]
            counts[c] += 1
            for t in range(d):
                sums[c, t] += x[i, t]
        return sums, counts

    @njit(cache=True)
    def _greedy_permute_nb(w, perm):
        rows, q = w.shape
        for j in range(q - 1):
            best = j + 1
            best_d = np.inf
            for c in range(j + 1, q):
                acc = 0.0
                for t in range(rows):
                    diff = w[t, c] - w[t, j]
                    acc += diff * diff
                if acc < best_d:
                    best_d = acc
                    best = c
            if best != j + 1:
                for t in range(rows):
                    tmp = w[t, j + 1]
                    w[t, j + 1] = w[t, best]
                    w[t, best] = tmp
                tmp_p = perm[j + 1]
                perm[j + 1] = perm[best]
                perm[best] = tmp_p

    @njit(cache=True)
    def _nearest_level_nb(values, levels):
        n = values.shape[0]
        m = levels.shape[0] - 1
        codes = np.empty(n, dtype=np.uint8)
        for i in range(n):
            v = values[i]
            # count of midpoints strictly below v
            lo = 0
            hi = m
            while lo < hi:
                mid = (lo + hi) // 2
                if (levels[mid] + levels[mid + 1]) / 2.0 < v:
                    lo = mid + 1
                else:
                    hi = mid
            codes[i] = lo
        return codes

    @njit(cache=True)
    def _pack_bits_nb(codes, width):
        n = codes.shape[0]
        total = n * width
        out = np.zeros((total + 7) // 8, dtype=np.uint8)
        pos = 0
        for i in range(n):
            c = codes[i]
            for b in range(width):
                if (c >> np.uint64(b)) & np.uint64(1):
                    out[pos >> 3] |= np.uint8(1 << (pos & 7))
                pos += 1
        return out

    @njit(cache=True)
    def _unpack_bits_nb(buf, width, count):
        out = np.zeros(count, dtype=np.uint64)
        pos = 0
        for i in range(count):
            acc = np.uint64(0)
            for b in range(width):
                if buf[pos >> 3] & np.uint8(1 << (pos & 7)):
                    acc |= np.uint64(1) << np.uint64(b)
                pos += 1
            out[i] = acc
        return out

    @njit(cache=True)
    def _jacobi_nb(u, v, max_sweeps, tol):
        p, q = u.shape
        worst = 0.0
        for sweep in range(max_sweeps):
            worst = 0.0
            rotated = False
            for i in range(q - 1):
                for j in range(i + 1, q):
                    a = 0.0
                    b = 0.0
                    g = 0.0
                    for t in range(p):
                        a += u[t, i] * u[t, i]
                        b += u[t, j] * u[t, j]
                        g += u[t, i] * u[t, j]
                    denom = math.sqrt(a * b)
                    if denom == 0.0:
                        continue
                    r = abs(g) / denom
                    if r > worst:
                        worst = r
                    if r <= tol:
                        continue
                    rotated = True
                    zeta = (b - a) / (2.0 * g)
                    t_ = math.copysign(1.0, zeta) / (
                        abs(zeta) + math.sqrt(1.0 + zeta * zeta)
                    )
                    c = 1.0 / math.sqrt(1.0 + t_ * t_)
                    s = c * t_
                    for t in range(p):
                        ui = u[t, i]
                        uj = u[t, j]
                        u[t, i] = c * ui - s * uj
                        u[t, j] = s * ui + c * uj
                    for t in range(q):
                        vi = v[t, i]
                        vj = v[t, j]
                        v[t, i] = c * vi - s * vj
                        v[t, j] = s * vi + c * vj
            if not rotated:
                return sweep + 1, worst, True
        return max_sweeps, worst, False


IMPLS = {
    "numpy": {
        "kmeans_assign": _kmeans_assign_np,
        "kmeans_update": _kmeans_update_np,
        "greedy_permute": _greedy_permute_np,
        "nearest_level": _nearest_level_np,
        "pack_bits": _pack_bits_np,
        "unpack_bits": _unpack_bits_np,
        "jacobi": _jacobi_np,
    }
}
if HAVE_NUMBA:
    IMPLS["numba"] = {
        "kmeans_assign": _kmeans_assign_nb,
        "kmeans_update": _kmeans_update_nb,
        "greedy_permute": _greedy_permute_nb,
        "nearest_level": _nearest_level_nb,
        "pack_bits": _pack_bits_nb,
        "unpack_bits": _unpack_bits_nb,
        "jacobi": _jacobi_nb,
    }

_ACTIVE = IMPLS[BACKEND]


def kmeans_assign(x, centroids):
    """Nearest-centroid labels and per-point squared distances."""
    return _ACTIVE["kmeans_assign"](
        np.ascontiguousarray(x, dtype=np.float64),
        np.ascontiguousarray(centroids, dtype=np.float64),
    )


def kmeans_update(x, labels, k):
    """Per-cluster coordinate sums and counts, accumulated in index order."""
    return _ACTIVE["kmeans_update"](
        np.ascontiguousarray(x, dtype=np.float64), labels, k
    )


def greedy_permute(w):
    """Greedy nearest-neighbor column ordering of a row strip.

    Returns (permuted copy, forward) where forward[i] is the source column
    now at position i.
    """
    out = np.ascontiguousarray(w, dtype=np.float64).copy()
    perm = np.arange(w.shape[1], dtype=np.int64)
    if w.shape[1] > 1:
        _ACTIVE["greedy_permute"](out, perm)
    return out, perm


def nearest_level(values, levels):
    """Index of the nearest level for each value; ties go to the lower level."""
    return _ACTIVE["nearest_level"](
        np.ascontiguousarray(values, dtype=np.float64),
        np.ascontiguousarray(levels, dtype=np.float64),
    )


def pack_bits(codes, width):
    """Pack fixed-width codes LSB-first into a little-endian byte array."""
    codes = np.ascontiguousarray(codes, dtype=np.uint64)
    if codes.size == 0:
        return np.zeros(0, dtype=np.uint8)
    return _ACTIVE["pack_bits"](codes, width)


def unpack_bits(buf, width, count):
    """Inverse of pack_bits."""
    if count == 0:
        return np.zeros(0, dtype=np.uint64)
    return _ACTIVE["unpack_bits"](np.ascontiguousarray(buf, dtype=np.uint8), width, count)


def jacobi_orthogonalize(u, v, max_sweeps, tol):
    """Run one-sided Jacobi sweeps in place; returns (sweeps, residual, converged)."""
    return _ACTIVE["jacobi"](u, v, max_sweeps, tol)
