"""Dense matrix primitives: Frobenius error, truncated SVD, patch tiling."""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConvergenceError, DimensionError, ParameterError, StructureError, TilingError

SVD_MAX_SWEEPS = 100
SVD_TOL = 1e-10


def as_matrix(w) -> np.ndarray:
    """Validate and return a 2-D float64 matrix with finite entries."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
        raise DimensionError(f"expected a non-empty 2-D matrix, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ParameterError("matrix entries must be finite")
    return w


def frobenius_error(a, b) -> float:
    """sqrt of the summed squared entry differences."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(((a - b) ** 2).sum()))


def truncated_svd(w, r: int):
    """Best rank-r factors (L1: p x r, L2: q x r) with w ~= L1 @ L2.T.

    Uses one-sided Jacobi orthogonalization; raises ConvergenceError with
    the achieved off-diagonal residual if the sweep cap is hit.
    """
    w = as_matrix(w)
    p, q = w.shape
    if not (1 <= r <= min(p, q)):
        raise ParameterError(f"rank must be in [1, {min(p, q)}], got {r}")

    transposed = p < q
    a = w.T if transposed else w
    u = np.ascontiguousarray(a, dtype=np.float64).copy()
    v = np.eye(a.shape[1], dtype=np.float64)
    sweeps, residual, converged = kernels.jacobi_orthogonalize(
        u, v, SVD_MAX_SWEEPS, SVD_TOL
    )
    if not converged:
        raise ConvergenceError(
            f"Jacobi SVD did not converge in {SVD_MAX_SWEEPS} sweeps", residual
        )

    norms = np.sqrt((u * u).sum(axis=0))
    order = np.argsort(-norms, kind="stable")[:r]
    left = u[:, order]
    right = v[:, order]
    if transposed:
        left, right = right, left
    return left, right


@dataclass
class PatchGrid:
    """Row-major grid of non-overlapping square patches."""

    patch_size: int
    patches: np.ndarray  # (grid_rows, grid_cols, s, s)
    grid_rows: int
    grid_cols: int


def patchify(w, s: int) -> PatchGrid:
    """Split into s x s patches; dims must tile exactly (no padding)."""
    w = as_matrix(w)
    p, q = w.shape
    if s < 1:
        raise ParameterError(f"patch size must be >= 1, got {s}")
    if p % s or q % s:
        raise TilingError(f"patch size {s} does not tile shape {(p, q)}")
    gr, gc = p // s, q // s
    patches = w.reshape(gr, s, gc, s).transpose(0, 2, 1, 3).copy()
    return PatchGrid(patch_size=s, patches=patches, grid_rows=gr, grid_cols=gc)


def depatchify(g: PatchGrid) -> np.ndarray:
    """Reassemble the source matrix; exact inverse of patchify."""
    patches = np.asarray(g.patches, dtype=np.float64)
    if patches.ndim != 4 or patches.shape[:2] != (g.grid_rows, g.grid_cols):
        raise StructureError(
            f"patch array shape {patches.shape} inconsistent with "
            f"grid {(g.grid_rows, g.grid_cols)}"
        )
    s = g.patch_size
    if patches.shape[2:] != (s, s):
        raise StructureError(f"patches are not {s} x {s}")
    return patches.transpose(0, 2, 1, 3).reshape(g.grid_rows * s, g.grid_cols * s)
