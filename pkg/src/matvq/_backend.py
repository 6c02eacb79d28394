"""Kernel backend selection.

Hot inner loops (kmeans assignment, permutation sweeps, Jacobi rotations,
level search, bit packing) have two implementations: numba @njit and pure
numpy. The MATVQ_BACKEND environment variable picks one:

    MATVQ_BACKEND=auto    use numba when importable, else numpy (default)
    MATVQ_BACKEND=numba   require numba, raise if missing
    MATVQ_BACKEND=numpy   force the pure-numpy path

Both implementations are importable regardless of the flag (the benchmark
and parity tests exercise them side by side); the flag only controls which
one the public functions dispatch to.
"""

import os

_CHOICES = ("auto", "numba", "numpy")

_requested = os.environ.get("MATVQ_BACKEND", "auto").lower()
if _requested not in _CHOICES:
    raise RuntimeError(
        f"MATVQ_BACKEND must be one of {_CHOICES}, got {_requested!r}"
    )

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

if _requested == "numba" and not HAVE_NUMBA:
    raise RuntimeError("MATVQ_BACKEND=numba but numba is not importable")

BACKEND = "numba" if (_requested in ("auto", "numba") and HAVE_NUMBA) else "numpy"


def use_numba() -> bool:
    return BACKEND == "numba"
